//! Heterogeneous feature interaction: gated fusion of the two channels and
//! the KL term that pulls their token distributions together.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::{ParamGroup, ParamStore};

/// Gate `W: 2d×d`, `b: 1×d` over the concatenated channels.
#[derive(Debug, Clone, Copy)]
pub struct FusionParams {
    pub gate: Linear,
}

impl FusionParams {
    pub fn register(store: &mut ParamStore, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            gate: Linear::register(store, "hfim.gate", 2 * dim, dim, ParamGroup::Other, rng),
        }
    }
}

fn check_same_shape(tape: &Tape<'_>, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::Shape(format!(
            "channel shapes differ: {:?} vs {:?}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

/// `g = σ([syn; sem]·W + b)`, `out = g ⊙ syn + (1 − g) ⊙ sem`.
pub fn fuse(tape: &mut Tape<'_>, syntactic: Var, semantic: Var, params: &FusionParams) -> Result<Var> {
    check_same_shape(tape, syntactic, semantic)?;
    let joined = tape.concat_cols(&[syntactic, semantic]);
    let z = params.gate.forward(tape, joined);
    let gate = tape.sigmoid(z);
    let diff = tape.sub(syntactic, semantic);
    let gated = tape.mul(gate, diff);
    Ok(tape.add(semantic, gated))
}

/// Mean over tokens of `KL(softmax(sem_t) ‖ softmax(syn_t))`.
pub fn channel_kl(tape: &mut Tape<'_>, syntactic: Var, semantic: Var) -> Result<Var> {
    check_same_shape(tape, syntactic, semantic)?;
    let rows = tape.shape(semantic).0.max(1);
    let p = tape.softmax_rows(semantic);
    let log_p = tape.log_softmax_rows(semantic);
    let log_q = tape.log_softmax_rows(syntactic);
    let log_ratio = tape.sub(log_p, log_q);
    let terms = tape.mul(p, log_ratio);
    let total = tape.sum_all(terms);
    Ok(tape.scale(total, 1.0 / rows as f64))
}
