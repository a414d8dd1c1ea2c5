//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls the forward closure, so it shares no
//! code path with [`Tape::backward`].

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::ParamStore;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Entries checked per tensor; smaller tensors are checked in full.
    pub max_entries_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            max_entries_per_tensor: usize::MAX,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EntryMismatch {
    pub tensor: String,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error per tensor, in store order.
    pub per_tensor: Vec<(String, f64)>,
    pub worst: Option<EntryMismatch>,
    pub entries_checked: usize,
    /// Smallest relu input seen at the unperturbed point.
    pub relu_margin: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_error)
    }
}

/// `|a - n| / max(|a| + |n|, 1e-6)`; the floor keeps near-zero gradients
/// from turning round-off into large ratios.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Compares the tape gradient of `loss` with central differences for
/// every tensor in `store`.
pub fn check_gradients<F>(store: &ParamStore, loss: F, options: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'p> Fn(&mut Tape<'p>) -> Result<Var>,
{
    let (grads, relu_margin) = {
        let mut tape = Tape::new(store);
        let root = loss(&mut tape)?;
        (tape.backward(root), tape.relu_margin())
    };

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(s);
        let root = loss(&mut tape)?;
        Ok(tape.scalar(root))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut work = store.clone();
    let mut per_tensor = Vec::new();
    let mut worst: Option<EntryMismatch> = None;
    let mut entries_checked = 0;

    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (rows, cols) = store.value(id).dim();
        let total = rows * cols;
        let chosen: Vec<usize> = if total <= options.max_entries_per_tensor {
            (0..total).collect()
        } else {
            let mut v = sample(&mut rng, total, options.max_entries_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        let mut tensor_worst = 0.0f64;
        for flat in chosen {
            let idx = (flat / cols, flat % cols);
            let original = work.value(id)[idx];
            work.value_mut(id)[idx] = original + options.epsilon;
            let plus = eval(&work)?;
            work.value_mut(id)[idx] = original - options.epsilon;
            let minus = eval(&work)?;
            work.value_mut(id)[idx] = original;

            let numeric = (plus - minus) / (2.0 * options.epsilon);
            let analytic = grads.get(id).map_or(0.0, |g| g[idx]);
            let rel = relative_error(analytic, numeric);
            entries_checked += 1;
            tensor_worst = tensor_worst.max(rel);
            if worst.as_ref().is_none_or(|w| rel > w.rel_error) {
                worst = Some(EntryMismatch {
                    tensor: store.get(id).name.clone(),
                    index: idx,
                    analytic,
                    numeric,
                    rel_error: rel,
                });
            }
        }
        per_tensor.push((store.get(id).name.clone(), tensor_worst));
    }

    Ok(GradCheckReport {
        per_tensor,
        worst,
        entries_checked,
        relu_margin,
    })
}
