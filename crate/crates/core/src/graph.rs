//! Graph convolution over the dependency graph (syntactic) and over the
//! encoder's attention (semantic).
//!
//! Propagation per layer is `relu(rownorm(A) · H · W + b)` with
//! `rownorm(A) = D⁻¹A`. Input features are first projected to the GCN width.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::encoder::AttentionMaps;
use crate::error::{Error, Result};
use crate::nn::{dropout, Linear};
use crate::params::{ParamGroup, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub dropout_rate: f64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 384,
            num_layers: 2,
            dropout_rate: 0.3,
        }
    }
}

impl GcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.num_layers == 0 {
            return Err(Error::Config("GCN sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "GCN dropout {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Gcn {
    pub config: GcnConfig,
    pub input_projection: Linear,
    pub layers: Vec<Linear>,
}

/// One propagation step over an already row-normalized adjacency.
pub fn propagate(tape: &mut Tape<'_>, features: Var, normalized_adjacency: Var, layer: &Linear) -> Var {
    let mixed = tape.matmul(normalized_adjacency, features);
    let z = layer.forward(tape, mixed);
    tape.relu(z)
}

impl Gcn {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        config: &GcnConfig,
        input_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let h = config.hidden_dim;
        let g = ParamGroup::Other;
        Self {
            config: config.clone(),
            input_projection: Linear::register(store, &format!("{name}.input"), input_dim, h, g, rng),
            layers: (0..config.num_layers)
                .map(|l| Linear::register(store, &format!("{name}.layer{l}"), h, h, g, rng))
                .collect(),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        features: Var,
        adjacency: Var,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let (rows, _) = tape.shape(features);
        let adj = tape.value(adjacency);
        if adj.dim() != (rows, rows) {
            return Err(Error::Shape(format!("adjacency {:?} for {rows} nodes", adj.dim())));
        }
        if let Some(r) = adj.rows().into_iter().position(|row| row.sum() == 0.0) {
            return Err(Error::Fault(format!("adjacency row {r} sums to zero")));
        }
        let normalized = tape.row_normalize(adjacency);
        let mut h = self.input_projection.forward(tape, features);
        for layer in &self.layers {
            h = propagate(tape, h, normalized, layer);
            h = dropout(tape, h, self.config.dropout_rate, rng.as_deref_mut());
        }
        Ok(h)
    }
}

/// Head-mean of the final layer's attention as a differentiable node.
pub fn semantic_adjacency_var(tape: &mut Tape<'_>, final_layer: &[Var]) -> Var {
    let mut sum = final_layer[0];
    for &head in &final_layer[1..] {
        sum = tape.add(sum, head);
    }
    tape.scale(sum, 1.0 / final_layer.len() as f64)
}

/// Head-mean of the final layer's attention; rows sum to one.
pub fn semantic_adjacency(maps: &AttentionMaps) -> Array2<f64> {
    maps.head_mean(maps.num_layers() - 1)
}
