//! Semantic channel: a transformer encoder with disentangled attention.
//!
//! Each attention score combines three terms between query position `i`
//! and key position `j`:
//!
//! * content-to-content `Qc_i · Kc_j`
//! * content-to-position `Qc_i · Kr[δ(i, j)]`
//! * position-to-content `Kc_j · Qr[δ(j, i)]`
//!
//! where `δ` is the clipped relative distance bucket and `Kr`, `Qr` are
//! learned per-layer relative-position tables. The sum is scaled by
//! `1/√(3·d_head)`. Layers are post-norm: residual, then layer norm.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{dropout, LayerNorm, Linear};
use crate::params::{ParamGroup, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    /// Half-window `k` of the relative-position buckets.
    pub max_rel_distance: usize,
    pub ffn_dim: usize,
    pub dropout_rate: f64,
    pub max_len: usize,
}

impl EncoderConfig {
    fn shape(hidden_dim: usize, num_heads: usize, num_layers: usize, max_rel_distance: usize) -> Self {
        Self {
            vocab_size: 2,
            hidden_dim,
            num_heads,
            num_layers,
            max_rel_distance,
            ffn_dim: 4 * hidden_dim,
            dropout_rate: 0.1,
            max_len: 128,
        }
    }

    pub fn v3_base() -> Self {
        Self::shape(768, 12, 12, 64)
    }

    pub fn v3_large() -> Self {
        Self::shape(1024, 16, 24, 64)
    }

    pub fn v2_xxlarge() -> Self {
        Self::shape(1536, 24, 48, 64)
    }

    pub fn toy() -> Self {
        Self {
            ffn_dim: 128,
            ..Self::shape(64, 4, 2, 8)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.hidden_dim == 0 || !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} must be a positive multiple of num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.max_rel_distance == 0 {
            return Err(Error::Config("max_rel_distance must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        if self.vocab_size < 2 || self.max_len == 0 || self.num_layers == 0 || self.ffn_dim == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        Ok(())
    }
}

/// `clamp(i − j, −k, k − 1) + k`, always in `[0, 2k)`.
pub fn relative_position_bucket(i: usize, j: usize, k: usize) -> usize {
    let k = k as i64;
    let delta = (i as i64 - j as i64).clamp(-k, k - 1);
    (delta + k) as usize
}

fn bucket_matrix(len: usize, k: usize) -> Array2<usize> {
    Array2::from_shape_fn((len, len), |(i, j)| relative_position_bucket(i, j, k))
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    /// `2k × hidden` table projected against content queries.
    pub rel_key: ParamId,
    /// `2k × hidden` table projected against content keys.
    pub rel_query: ParamId,
    pub output: Linear,
}

impl AttentionParams {
    pub fn register(store: &mut ParamStore, name: &str, config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = config.hidden_dim;
        let buckets = 2 * config.max_rel_distance;
        let g = ParamGroup::Encoder;
        Self {
            query: Linear::register(store, &format!("{name}.query"), d, d, g, rng),
            key: Linear::register(store, &format!("{name}.key"), d, d, g, rng),
            value: Linear::register(store, &format!("{name}.value"), d, d, g, rng),
            rel_key: store.add_uniform(format!("{name}.rel_key"), buckets, d, g, rng),
            rel_query: store.add_uniform(format!("{name}.rel_query"), buckets, d, g, rng),
            output: Linear::register(store, &format!("{name}.output"), d, d, g, rng),
        }
    }
}

/// Settings for one attention call.
#[derive(Debug, Clone, Copy)]
pub struct AttentionSpec<'m> {
    pub num_heads: usize,
    pub max_rel_distance: usize,
    pub dropout_rate: f64,
    /// `true` for real tokens; masked keys receive no attention.
    pub key_mask: Option<&'m [bool]>,
    /// Layer index, used in diagnostics only.
    pub layer: usize,
}

const MASKED_SCORE: f64 = -1e30;

/// One multi-head disentangled attention block. Returns the projected
/// context (before residual) and the per-head attention probabilities.
pub fn disentangled_attention(
    tape: &mut Tape<'_>,
    params: &AttentionParams,
    hidden: Var,
    spec: AttentionSpec<'_>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Var, Vec<Var>)> {
    let (len, dim) = tape.shape(hidden);
    let head_dim = dim / spec.num_heads;
    let scale = 1.0 / (3.0 * head_dim as f64).sqrt();
    let buckets = bucket_matrix(len, spec.max_rel_distance);
    let mask = spec
        .key_mask
        .map(|m| Array2::from_shape_fn((len, len), |(_, j)| if m[j] { 0.0 } else { MASKED_SCORE }));

    let q = params.query.forward(tape, hidden);
    let k = params.key.forward(tape, hidden);
    let v = params.value.forward(tape, hidden);
    let rel_k = tape.param(params.rel_key);
    let rel_q = tape.param(params.rel_query);

    let mut contexts = Vec::with_capacity(spec.num_heads);
    let mut maps = Vec::with_capacity(spec.num_heads);
    for head in 0..spec.num_heads {
        let (lo, hi) = (head * head_dim, (head + 1) * head_dim);
        let qh = tape.slice_cols(q, lo, hi);
        let kh = tape.slice_cols(k, lo, hi);
        let vh = tape.slice_cols(v, lo, hi);
        let rkh = tape.slice_cols(rel_k, lo, hi);
        let rqh = tape.slice_cols(rel_q, lo, hi);

        let kh_t = tape.transpose(kh);
        let c2c = tape.matmul(qh, kh_t);

        // [i, b] = Qc_i · Kr_b, then pick b = δ(i, j)
        let rkh_t = tape.transpose(rkh);
        let c2p_all = tape.matmul(qh, rkh_t);
        let c2p = tape.gather_cols(c2p_all, buckets.clone());

        // [j, b] = Kc_j · Qr_b, pick b = δ(j, i), then transpose to [i, j]
        let rqh_t = tape.transpose(rqh);
        let p2c_all = tape.matmul(kh, rqh_t);
        let p2c_ji = tape.gather_cols(p2c_all, buckets.clone());
        let p2c = tape.transpose(p2c_ji);

        let scores = tape.add(c2c, c2p);
        let scores = tape.add(scores, p2c);
        let mut scores = tape.scale(scores, scale);
        if let Some(mask) = &mask {
            scores = tape.add_const(scores, mask.clone());
        }
        let probs = tape.softmax_rows(scores);
        if tape.value(probs).iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                component: "disentangled attention",
                layer: spec.layer,
                head,
            });
        }
        maps.push(probs);
        let dropped = dropout(tape, probs, spec.dropout_rate, rng.as_deref_mut());
        contexts.push(tape.matmul(dropped, vh));
    }
    let context = tape.concat_cols(&contexts);
    Ok((params.output.forward(tape, context), maps))
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderLayer {
    pub attention: AttentionParams,
    pub attention_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ffn_norm: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    /// Token table, also consumed by the syntactic channel.
    pub embeddings: ParamId,
    pub embedding_norm: LayerNorm,
    pub layers: Vec<EncoderLayer>,
}

/// Values of the attention probabilities: `[layer][head]`, each `len×len`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    pub layers: Vec<Vec<Array2<f64>>>,
}

impl AttentionMaps {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Resolves a possibly negative layer index (`-1` = last).
    pub fn layer_index(&self, layer: i64) -> Option<usize> {
        let n = self.layers.len() as i64;
        let idx = if layer < 0 { n + layer } else { layer };
        (0..n).contains(&idx).then_some(idx as usize)
    }

    pub fn head_mean(&self, layer: usize) -> Array2<f64> {
        let heads = &self.layers[layer];
        let mut sum = heads[0].clone();
        for h in &heads[1..] {
            sum += h;
        }
        sum / heads.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Raw embedding rows looked up for the input ids.
    pub embeddings: Var,
    pub hidden: Var,
    /// Attention probability nodes, `[layer][head]`.
    pub attention: Vec<Vec<Var>>,
}

impl EncoderOutput {
    pub fn attention_maps(&self, tape: &Tape<'_>) -> AttentionMaps {
        AttentionMaps {
            layers: self
                .attention
                .iter()
                .map(|heads| heads.iter().map(|&h| tape.value(h).clone()).collect())
                .collect(),
        }
    }
}

impl Encoder {
    pub fn register(store: &mut ParamStore, config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = config.hidden_dim;
        let g = ParamGroup::Encoder;
        let embeddings = store.add_uniform("encoder.embeddings", config.vocab_size, d, g, rng);
        let embedding_norm = LayerNorm::register(store, "encoder.embedding_norm", d, g);
        let layers = (0..config.num_layers)
            .map(|l| {
                let name = format!("encoder.layer{l}");
                EncoderLayer {
                    attention: AttentionParams::register(store, &format!("{name}.attention"), config, rng),
                    attention_norm: LayerNorm::register(store, &format!("{name}.attention_norm"), d, g),
                    ffn_in: Linear::register(store, &format!("{name}.ffn_in"), d, config.ffn_dim, g, rng),
                    ffn_out: Linear::register(store, &format!("{name}.ffn_out"), config.ffn_dim, d, g, rng),
                    ffn_norm: LayerNorm::register(store, &format!("{name}.ffn_norm"), d, g),
                }
            })
            .collect();
        Self {
            config: config.clone(),
            embeddings,
            embedding_norm,
            layers,
        }
    }

    /// Runs the encoder. Dropout is active only when `rng` is given.
    pub fn encode(
        &self,
        tape: &mut Tape<'_>,
        ids: &[usize],
        key_mask: Option<&[bool]>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<EncoderOutput> {
        let cfg = &self.config;
        if ids.is_empty() {
            return Err(Error::Fault("cannot encode an empty sequence".into()));
        }
        if ids.len() > cfg.max_len {
            return Err(Error::Fault(format!(
                "sequence length {} exceeds max_len {}",
                ids.len(),
                cfg.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::Fault(format!(
                "token id {bad} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        if key_mask.is_some_and(|m| m.len() != ids.len()) {
            return Err(Error::Shape("key mask length differs from sequence".into()));
        }

        let table = tape.param(self.embeddings);
        let embeddings = tape.gather_rows(table, ids.to_vec());
        let mut hidden = self.embedding_norm.forward(tape, embeddings);
        hidden = dropout(tape, hidden, cfg.dropout_rate, rng.as_deref_mut());

        let mut attention = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let spec = AttentionSpec {
                num_heads: cfg.num_heads,
                max_rel_distance: cfg.max_rel_distance,
                dropout_rate: cfg.dropout_rate,
                key_mask,
                layer: l,
            };
            let (context, maps) = disentangled_attention(tape, &layer.attention, hidden, spec, rng.as_deref_mut())?;
            attention.push(maps);
            let context = dropout(tape, context, cfg.dropout_rate, rng.as_deref_mut());
            let residual = tape.add(hidden, context);
            hidden = layer.attention_norm.forward(tape, residual);

            let inner = layer.ffn_in.forward(tape, hidden);
            let inner = tape.gelu(inner);
            let out = layer.ffn_out.forward(tape, inner);
            let out = dropout(tape, out, cfg.dropout_rate, rng.as_deref_mut());
            let residual = tape.add(hidden, out);
            hidden = layer.ffn_norm.forward(tape, residual);
        }
        if tape.value(hidden).iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                component: "encoder output",
                layer: self.layers.len().saturating_sub(1),
                head: 0,
            });
        }
        Ok(EncoderOutput {
            embeddings,
            hidden,
            attention,
        })
    }
}
