//! Small building blocks shared by the channels and heads.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::params::{ParamGroup, ParamId, ParamStore};

/// Affine map `x·W + b` with `W: in×out`, `b: 1×out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        group: ParamGroup,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            weight: store.add_uniform(format!("{name}.weight"), input, output, group, rng),
            bias: store.add_zeros(format!("{name}.bias"), 1, output, group),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn register(store: &mut ParamStore, name: &str, dim: usize, group: ParamGroup) -> Self {
        Self {
            gain: store.add_ones(format!("{name}.gain"), 1, dim, group),
            bias: store.add_zeros(format!("{name}.bias"), 1, dim, group),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Inverted dropout. A no-op when `rng` is `None` (evaluation) or `rate` is 0.
pub fn dropout(tape: &mut Tape<'_>, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Var {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 - rate;
            let mask = Array2::from_shape_fn(
                tape.shape(x),
                |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                },
            );
            tape.mul_const(x, mask)
        }
        _ => x,
    }
}

/// Two-layer relu classifier.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub hidden: Linear,
    pub output: Linear,
}

impl FeedForward {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            hidden: Linear::register(store, &format!("{name}.hidden"), input, hidden, ParamGroup::Other, rng),
            output: Linear::register(store, &format!("{name}.output"), hidden, output, ParamGroup::Other, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let h = self.hidden.forward(tape, x);
        let h = tape.relu(h);
        self.output.forward(tape, h)
    }
}
