//! Syntactic channel: a stacked bidirectional LSTM and the dependency
//! adjacency that the syntactic GCN runs over.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::nn::dropout;
use crate::params::{ParamGroup, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub num_layers: usize,
    pub hidden_per_direction: usize,
    pub dropout_rate: f64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            hidden_per_direction: 384,
            dropout_rate: 0.5,
        }
    }
}

impl LstmConfig {
    pub fn output_dim(&self) -> usize {
        2 * self.hidden_per_direction
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_per_direction == 0 {
            return Err(Error::Config("LSTM sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "LSTM dropout {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Weights for one direction of one layer. Gate column order is
/// input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub input_weight: ParamId,
    pub hidden_weight: ParamId,
    pub bias: ParamId,
}

impl LstmCell {
    fn register(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let g = ParamGroup::Other;
        Self {
            input_weight: store.add_uniform(format!("{name}.input_weight"), input, 4 * hidden, g, rng),
            hidden_weight: store.add_uniform(format!("{name}.hidden_weight"), hidden, 4 * hidden, g, rng),
            bias: store.add_zeros(format!("{name}.bias"), 1, 4 * hidden, g),
        }
    }

    /// Runs the cell over `x` in the given order and returns hidden states
    /// in original position order.
    fn run(&self, tape: &mut Tape<'_>, x: Var, hidden: usize, reverse: bool) -> Var {
        let len = tape.shape(x).0;
        let w_ih = tape.param(self.input_weight);
        let w_hh = tape.param(self.hidden_weight);
        let b = tape.param(self.bias);
        let projected = tape.matmul(x, w_ih);
        let projected = tape.add_row(projected, b);

        let mut h = tape.constant(Array2::zeros((1, hidden)));
        let mut c = tape.constant(Array2::zeros((1, hidden)));
        let mut outputs = vec![h; len];
        let order: Vec<usize> = if reverse {
            (0..len).rev().collect()
        } else {
            (0..len).collect()
        };
        for t in order {
            let xt = tape.slice_rows(projected, t, t + 1);
            let recur = tape.matmul(h, w_hh);
            let z = tape.add(xt, recur);
            let zi = tape.slice_cols(z, 0, hidden);
            let zf = tape.slice_cols(z, hidden, 2 * hidden);
            let zg = tape.slice_cols(z, 2 * hidden, 3 * hidden);
            let zo = tape.slice_cols(z, 3 * hidden, 4 * hidden);
            let i = tape.sigmoid(zi);
            let f = tape.sigmoid(zf);
            let g = tape.tanh(zg);
            let o = tape.sigmoid(zo);
            let keep = tape.mul(f, c);
            let write = tape.mul(i, g);
            c = tape.add(keep, write);
            let tc = tape.tanh(c);
            h = tape.mul(o, tc);
            outputs[t] = h;
        }
        tape.concat_rows(&outputs)
    }
}

#[derive(Debug, Clone)]
pub struct BiLstm {
    pub config: LstmConfig,
    /// `(forward, backward)` cells per layer.
    pub layers: Vec<(LstmCell, LstmCell)>,
}

impl BiLstm {
    pub fn register(store: &mut ParamStore, config: &LstmConfig, input_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let h = config.hidden_per_direction;
        let layers = (0..config.num_layers)
            .map(|l| {
                let input = if l == 0 { input_dim } else { 2 * h };
                (
                    LstmCell::register(store, &format!("lstm.layer{l}.forward"), input, h, rng),
                    LstmCell::register(store, &format!("lstm.layer{l}.backward"), input, h, rng),
                )
            })
            .collect();
        Self {
            config: config.clone(),
            layers,
        }
    }

    /// `len × in` → `len × 2·hidden`. Dropout between layers when `rng` is given.
    pub fn encode(&self, tape: &mut Tape<'_>, embeddings: Var, mut rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let h = self.config.hidden_per_direction;
        let mut x = embeddings;
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            if l > 0 {
                x = dropout(tape, x, self.config.dropout_rate, rng.as_deref_mut());
            }
            let f = fwd.run(tape, x, h, false);
            let b = bwd.run(tape, x, h, true);
            x = tape.concat_cols(&[f, b]);
            if tape.value(x).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    component: "bilstm",
                    layer: l,
                    head: 0,
                });
            }
        }
        Ok(x)
    }
}

/// Undirected 0/1 adjacency with self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct DepGraph {
    pub adjacency: Array2<f64>,
}

impl DepGraph {
    /// Linear-chain graph for sentences without a parse.
    pub fn chain(len: usize) -> Self {
        let mut a = Array2::eye(len);
        for i in 1..len {
            a[[i, i - 1]] = 1.0;
            a[[i - 1, i]] = 1.0;
        }
        Self { adjacency: a }
    }

    pub fn from_heads(heads: &[Option<usize>]) -> Result<Self> {
        let len = heads.len();
        let mut a = Array2::eye(len);
        for (i, head) in heads.iter().enumerate() {
            if let Some(h) = *head {
                if h >= len || h == i {
                    return Err(Error::Validation(format!("token {i} has invalid head {h}")));
                }
                a[[i, h]] = 1.0;
                a[[h, i]] = 1.0;
            }
        }
        Ok(Self { adjacency: a })
    }
}

pub fn build_dep_adjacency(sentence: &Sentence) -> Result<DepGraph> {
    match &sentence.dep_heads {
        Some(heads) if heads.len() != sentence.len() => Err(Error::Validation(format!(
            "{} dependency heads for {} tokens",
            heads.len(),
            sentence.len()
        ))),
        Some(heads) => DepGraph::from_heads(heads),
        None => Ok(DepGraph::chain(sentence.len())),
    }
}
