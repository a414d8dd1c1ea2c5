//! Single-file parameter archive.
//!
//! Layout: `DESSCKPT`, u32 LE format version, u64 LE header length, a JSON
//! header, then every tensor as row-major little-endian f64 in header order.
//! Offsets in the header are relative to the start of the tensor data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::evaluation::Metrics;
use crate::model::{DessModel, ModelConfig};
use crate::training::Checkpoint;

const MAGIC: &[u8; 8] = b"DESSCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vec<String>,
    epoch: usize,
    dev: Metrics,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<W: Write>(mut out: W, checkpoint: &Checkpoint) -> Result<()> {
    let params = &checkpoint.model.params;
    let mut offset = 0u64;
    let tensors = params
        .iter()
        .map(|(_, p)| {
            let (r, c) = p.value.dim();
            let entry = TensorEntry {
                name: p.name.clone(),
                shape: [r, c],
                offset,
            };
            offset += (r * c * 8) as u64;
            entry
        })
        .collect();
    let header = Header {
        config: checkpoint.model.config.clone(),
        vocab: checkpoint.model.vocab.regular_tokens().to_vec(),
        epoch: checkpoint.epoch,
        dev: checkpoint.dev,
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for (_, p) in params.iter() {
        for x in p.value.iter() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;

    let vocab = Vocab::from_tokens(header.vocab);
    let mut model = DessModel::new(header.config, vocab, 0)?;
    if header.tensors.len() != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "archive holds {} tensors, model expects {}",
            header.tensors.len(),
            model.params.len()
        )));
    }
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    for t in &header.tensors {
        let [r, c] = t.shape;
        let start = t.offset as usize;
        let end = start + r * c * 8;
        let bytes = data
            .get(start..end)
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` runs past end of file", t.name)))?;
        let values = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let value = Array2::from_shape_vec((r, c), values).map_err(|e| Error::Checkpoint(e.to_string()))?;
        model.params.assign(&t.name, value)?;
    }
    Ok(Checkpoint {
        model,
        epoch: header.epoch,
        dev: header.dev,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), checkpoint)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
