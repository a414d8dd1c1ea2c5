//! Loss assembly, optimization and the train/dev/test protocol.
//!
//! Only training sentences ever reach [`Tape::backward`]. After every epoch
//! the dev split is scored without updates; the best dev-F1 snapshot is
//! kept and the test split is scored once, on that snapshot, at the end.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::{DatasetSplit, Sentence, Vocab};
use crate::error::{Error, Result};
use crate::evaluation::{exact_match, Metrics, TripletsById};
use crate::head::{sample_negatives, EntityLabel, PairLabel};
use crate::hfim::channel_kl;
use crate::model::{DessModel, ModelConfig, PreparedSentence};
use crate::params::{Gradients, ParamGroup, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_encoder: f64,
    pub lr_other: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub max_grad_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub kl_weight: f64,
    /// Epochs without dev-F1 improvement before stopping.
    pub patience: usize,
    pub min_freq: usize,
    /// Also score the training split after each epoch.
    #[serde(default)]
    pub track_train_f1: bool,
    /// Stop as soon as tracked train F1 reaches this value.
    #[serde(default)]
    pub target_train_f1: Option<f64>,
}

impl TrainConfig {
    /// Main settings: encoder lr 2e-5, others 1e-4, warmup 0.1, batch 8, 120 epochs.
    pub fn main_preset() -> Self {
        Self {
            lr_encoder: 2e-5,
            lr_other: 1e-4,
            weight_decay: 0.01,
            warmup_ratio: 0.1,
            max_grad_norm: 1.0,
            epochs: 120,
            batch_size: 8,
            seed: 42,
            kl_weight: 0.1,
            patience: 10,
            min_freq: 1,
            track_train_f1: false,
            target_train_f1: None,
        }
    }

    /// Base-encoder variant settings: lr 5e-5, batch 16, no warmup.
    pub fn table1_base() -> Self {
        Self {
            lr_encoder: 5e-5,
            batch_size: 16,
            warmup_ratio: 0.0,
            epochs: 20,
            ..Self::main_preset()
        }
    }

    /// Base-encoder hyperparameter settings: 20 epochs, warmup 0.2.
    pub fn table3() -> Self {
        Self {
            lr_encoder: 5e-5,
            batch_size: 16,
            warmup_ratio: 0.2,
            epochs: 20,
            ..Self::main_preset()
        }
    }

    /// One of the three tuning trials on 14res.
    pub fn sweep_trial(trial: usize) -> Option<Self> {
        let (lr, wd, batch, warmup, clip) = match trial {
            0 => (9.54706e-5, 4.08672e-4, 64, 1.63430e-1, 1.47640),
            1 => (1.62565e-4, 4.51598e-5, 32, 1.58632e-1, 0.80677),
            2 => (8.64886e-5, 2.07628e-5, 64, 4.34641e-2, 1.44531),
            _ => return None,
        };
        Some(Self {
            lr_encoder: lr,
            lr_other: lr,
            weight_decay: wd,
            batch_size: batch,
            warmup_ratio: warmup,
            max_grad_norm: clip,
            epochs: 20,
            ..Self::main_preset()
        })
    }

    pub fn toy() -> Self {
        Self {
            lr_encoder: 1e-3,
            lr_other: 1e-3,
            weight_decay: 0.01,
            warmup_ratio: 0.1,
            max_grad_norm: 1.0,
            epochs: 300,
            batch_size: 4,
            seed: 42,
            kl_weight: 0.1,
            patience: 300,
            min_freq: 1,
            track_train_f1: false,
            target_train_f1: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_encoder > 0.0 && self.lr_other > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config(format!(
                "warmup_ratio {} not in [0, 1)",
                self.warmup_ratio
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if self.max_grad_norm <= 0.0 || self.weight_decay < 0.0 || self.kl_weight < 0.0 {
            return Err(Error::Config(
                "max_grad_norm must be positive; decay and kl weight non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// `mean CE(entities) + mean CE(pairs) + kl_weight · KL(sem ‖ syn)`.
/// An absent pair set contributes nothing.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape<'_>,
    entity_logits: Var,
    entity_labels: &[EntityLabel],
    pair_logits: Option<Var>,
    pair_labels: &[PairLabel],
    syntactic: Var,
    semantic: Var,
    kl_weight: f64,
) -> Result<Var> {
    if entity_labels.is_empty() {
        return Err(Error::Fault("empty entity sample set".into()));
    }
    let mut loss = tape.cross_entropy(entity_logits, entity_labels.iter().map(|l| *l as usize).collect());
    if let Some(pairs) = pair_logits {
        if !pair_labels.is_empty() {
            let pair_loss = tape.cross_entropy(pairs, pair_labels.iter().map(|l| *l as usize).collect());
            loss = tape.add(loss, pair_loss);
        }
    }
    if kl_weight != 0.0 {
        let kl = channel_kl(tape, syntactic, semantic)?;
        let kl = tape.scale(kl, kl_weight);
        loss = tape.add(loss, kl);
    }
    Ok(loss)
}

/// Linear warmup over the first `⌈warmup_ratio · total⌉` steps, then linear decay to 0.
pub fn lr_multiplier(step: usize, total_steps: usize, warmup_ratio: f64) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return 0.0;
    }
    let warmup = (warmup_ratio * total_steps as f64).ceil() as usize;
    if step < warmup {
        step as f64 / warmup as f64
    } else {
        (total_steps - step) as f64 / (total_steps - warmup) as f64
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, store: &ParamStore, max_norm: f64) -> Result<f64> {
    for (id, g) in grads.iter() {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(store.get(id).name.clone()));
        }
    }
    let norm = grads.global_norm();
    if norm > max_norm {
        let factor = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            *g *= factor;
        }
    }
    Ok(norm)
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    steps: i32,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct LearningRates {
    pub encoder: f64,
    pub other: f64,
}

impl AdamW {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Array2<f64>> = store.iter().map(|(_, p)| Array2::zeros(p.value.dim())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Parameters without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: LearningRates, weight_decay: f64) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let rate = match store.get(id).group {
                ParamGroup::Encoder => lr.encoder,
                ParamGroup::Other => lr.other,
            };
            let i = id.index();
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            match grads.get(id) {
                Some(g) => {
                    ndarray::Zip::from(&mut *m)
                        .and(g)
                        .for_each(|m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
                    ndarray::Zip::from(&mut *v)
                        .and(g)
                        .for_each(|v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
                }
                None => {
                    *m *= self.beta1;
                    *v *= self.beta2;
                }
            }
            let eps = self.epsilon;
            let p = store.value_mut(id);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p *= 1.0 - rate * weight_decay;
                *p -= rate * (m / c1) / ((v / c2).sqrt() + eps);
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best dev F1; a later epoch must be strictly better to count.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, f1: f64) -> StopDecision {
        if self.best.is_none_or(|(_, best)| f1 > best) {
            self.best = Some((epoch, f1));
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

/// Scores a model on held-out sentences without touching its parameters.
pub trait DevEvaluator {
    fn evaluate(&mut self, model: &DessModel, sentences: &[Sentence]) -> Result<Metrics>;
}

/// Exact-match F1 of decoded predictions.
#[derive(Debug, Default, Clone, Copy)]
pub struct ExactMatchEvaluator;

impl DevEvaluator for ExactMatchEvaluator {
    fn evaluate(&mut self, model: &DessModel, sentences: &[Sentence]) -> Result<Metrics> {
        evaluate_split(model, sentences)
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: DessModel,
    pub epoch: usize,
    pub dev: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: Metrics,
    pub lr: f64,
    pub train_f1: Option<f64>,
}

/// Where gradient updates came from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ProtocolCounters {
    pub backward_passes: usize,
    pub train_batches_per_epoch: usize,
    pub epochs_run: usize,
    pub dev_updates: usize,
    pub test_updates: usize,
    pub dev_evaluations: usize,
    pub test_evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
    pub test: Metrics,
    pub counters: ProtocolCounters,
    pub stopped_early: bool,
}

fn check_disjoint(split: &DatasetSplit) -> Result<()> {
    let train: HashSet<&str> = split.train.iter().map(|s| s.id.as_str()).collect();
    for (name, held_out) in [("dev", &split.dev), ("test", &split.test)] {
        if let Some(s) = held_out.iter().find(|s| train.contains(s.id.as_str())) {
            return Err(Error::Protocol(format!(
                "{name} sentence `{}` also appears in train",
                s.id
            )));
        }
    }
    let dev: HashSet<&str> = split.dev.iter().map(|s| s.id.as_str()).collect();
    if let Some(s) = split.test.iter().find(|s| dev.contains(s.id.as_str())) {
        return Err(Error::Protocol(format!("test sentence `{}` also appears in dev", s.id)));
    }
    Ok(())
}

/// Mean loss over a batch of prepared sentences.
pub fn batch_loss<'p>(
    tape: &mut Tape<'p>,
    model: &'p DessModel,
    batch: &[&PreparedSentence],
    kl_weight: f64,
    rng: &mut ChaCha8Rng,
    train_mode: bool,
) -> Result<Var> {
    let mut losses = Vec::with_capacity(batch.len());
    for input in batch {
        let features = model.features(tape, input, train_mode.then_some(&mut *rng))?;
        let samples = sample_negatives(
            &input.sentence,
            &input.candidates,
            model.config.head.neg_entity,
            model.config.head.neg_triple,
            rng,
        );
        let (entity, pairs) = model.sample_logits(tape, &features, &samples)?;
        losses.push(total_loss(
            tape,
            entity,
            &samples.entity_labels,
            pairs,
            &samples.pair_labels,
            features.syntactic,
            features.semantic,
            kl_weight,
        )?);
    }
    let stacked = tape.concat_rows(&losses);
    Ok(tape.mean_all(stacked))
}

/// Attributes every backward pass to the splits its batch was drawn from.
struct Run<'a> {
    dev_ids: HashSet<&'a str>,
    test_ids: HashSet<&'a str>,
    counters: ProtocolCounters,
}

impl Run<'_> {
    fn backward(&mut self, tape: &Tape<'_>, loss: Var, batch: &[&PreparedSentence]) -> Gradients {
        let ids = || batch.iter().map(|p| p.sentence.id.as_str());
        if ids().any(|id| self.dev_ids.contains(id)) {
            self.counters.dev_updates += 1;
        }
        if ids().any(|id| self.test_ids.contains(id)) {
            self.counters.test_updates += 1;
        }
        self.counters.backward_passes += 1;
        tape.backward(loss)
    }
}

pub fn train(split: &DatasetSplit, model_config: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(split, model_config, config, &mut ExactMatchEvaluator)
}

pub fn train_with(
    split: &DatasetSplit,
    model_config: &ModelConfig,
    config: &TrainConfig,
    dev_evaluator: &mut dyn DevEvaluator,
) -> Result<TrainOutcome> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Protocol("training split is empty".into()));
    }
    check_disjoint(split)?;

    let vocab = Vocab::build(&split.train, config.min_freq);
    let mut model = DessModel::new(model_config.clone(), vocab, config.seed)?;
    let prepared: Vec<PreparedSentence> = split.train.iter().map(|s| model.prepare(s)).collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut optimizer = AdamW::new(&model.params);
    let batches_per_epoch = prepared.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let mut run = Run {
        dev_ids: split.dev.iter().map(|s| s.id.as_str()).collect(),
        test_ids: split.test.iter().map(|s| s.id.as_str()).collect(),
        counters: ProtocolCounters {
            train_batches_per_epoch: batches_per_epoch,
            ..Default::default()
        },
    };
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best: Option<Checkpoint> = None;
    let mut log = Vec::new();
    let mut step = 0;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..prepared.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedSentence> = chunk.iter().map(|&i| &prepared[i]).collect();
            let mut grads = {
                let mut tape = Tape::new(&model.params);
                let loss = batch_loss(&mut tape, &model, &batch, config.kl_weight, &mut rng, true)?;
                epoch_loss += tape.scalar(loss);
                run.backward(&tape, loss, &batch)
            };
            clip_gradients(&mut grads, &model.params, config.max_grad_norm)?;
            let factor = lr_multiplier(step, total_steps, config.warmup_ratio);
            let rates = LearningRates {
                encoder: config.lr_encoder * factor,
                other: config.lr_other * factor,
            };
            lr = rates.other;
            optimizer.step(&mut model.params, &grads, rates, config.weight_decay);
            step += 1;
        }
        run.counters.epochs_run = epoch;

        let dev = dev_evaluator.evaluate(&model, &split.dev)?;
        run.counters.dev_evaluations += 1;
        let train_f1 = if config.track_train_f1 {
            Some(evaluate_split(&model, &split.train)?.f1)
        } else {
            None
        };
        let entry = EpochLog {
            epoch,
            train_loss: epoch_loss / batches_per_epoch as f64,
            dev,
            lr,
            train_f1,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} dev P/R/F1 {:.4}/{:.4}/{:.4}{}",
            entry.train_loss,
            dev.precision,
            dev.recall,
            dev.f1,
            train_f1.map(|f| format!(" train F1 {f:.4}")).unwrap_or_default()
        );
        log.push(entry);

        let decision = stopper.observe(epoch, dev.f1);
        if decision == StopDecision::Improved {
            best = Some(Checkpoint {
                model: model.clone(),
                epoch,
                dev,
            });
        }
        if let (Some(f1), Some(target)) = (train_f1, config.target_train_f1) {
            if f1 >= target {
                stopped_early = epoch < config.epochs;
                break;
            }
        }
        if decision == StopDecision::Stop {
            stopped_early = epoch < config.epochs;
            break;
        }
    }

    let best = best.expect("at least one epoch ran");
    let test = evaluate_split(&best.model, &split.test)?;
    run.counters.test_evaluations += 1;
    Ok(TrainOutcome {
        best,
        log,
        test,
        counters: run.counters,
        stopped_early,
    })
}

/// Decoded predictions keyed by sentence id.
pub fn predict_all(model: &DessModel, sentences: &[Sentence]) -> Result<TripletsById> {
    sentences
        .iter()
        .map(|s| Ok((s.id.clone(), model.predict_sentence(s)?.triplets)))
        .collect()
}

pub fn gold_by_id(sentences: &[Sentence]) -> TripletsById {
    sentences.iter().map(|s| (s.id.clone(), s.gold_set())).collect()
}

/// Exact-match metrics against the full (untruncated) gold annotations.
pub fn evaluate_split(model: &DessModel, sentences: &[Sentence]) -> Result<Metrics> {
    exact_match(&predict_all(model, sentences)?, &gold_by_id(sentences))
}

/// CSV with columns epoch, train_loss, dev_P, dev_R, dev_F1, lr.
pub fn write_log_csv(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["epoch", "train_loss", "dev_P", "dev_R", "dev_F1", "lr"])?;
    for e in log {
        writer.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.dev.precision.to_string(),
            e.dev.recall.to_string(),
            e.dev.f1.to_string(),
            e.lr.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes the log to any writer; used by the CLI for stdout.
pub fn write_log<W: Write>(out: W, log: &[EpochLog]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["epoch", "train_loss", "dev_P", "dev_R", "dev_F1", "lr"])?;
    for e in log {
        writer.serialize((e.epoch, e.train_loss, e.dev.precision, e.dev.recall, e.dev.f1, e.lr))?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamGroup;
    use ndarray::array;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_multiplier(0, 100, 0.1), 0.0);
        assert_eq!(lr_multiplier(10, 100, 0.1), 1.0);
        assert_eq!(lr_multiplier(5, 100, 0.1), 0.5);
        assert_eq!(lr_multiplier(55, 100, 0.1), 0.5);
        assert_eq!(lr_multiplier(100, 100, 0.1), 0.0);
        assert_eq!(lr_multiplier(0, 10, 0.0), 1.0);
    }

    #[test]
    fn schedule_is_continuous_at_warmup_boundary() {
        let total = 37;
        let w = (0.2f64 * total as f64).ceil() as usize;
        let left = lr_multiplier(w - 1, total, 0.2) + 1.0 / w as f64;
        let right = lr_multiplier(w + 1, total, 0.2) + 1.0 / (total - w) as f64;
        assert!((left - 1.0).abs() < 1e-12 && (right - 1.0).abs() < 1e-12);
    }

    fn single(value: f64) -> (ParamStore, crate::params::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("p", array![[value]], ParamGroup::Other);
        (store, id)
    }

    #[test]
    fn clipping() {
        let (store, id) = single(0.0);
        let mut grads = Gradients::zeros_like(&store);
        grads.accumulate(id, &array![[0.3, 0.4]]);
        assert_eq!(clip_gradients(&mut grads, &store, 1.0).unwrap(), 0.5);
        assert_eq!(grads.get(id).unwrap(), &array![[0.3, 0.4]]);

        let mut grads = Gradients::zeros_like(&store);
        grads.accumulate(id, &array![[1.2, 1.6]]);
        assert_eq!(clip_gradients(&mut grads, &store, 1.0).unwrap(), 2.0);
        let g = grads.get(id).unwrap();
        assert!((g - &array![[0.6, 0.8]]).iter().all(|d| d.abs() < 1e-15));
        assert!((grads.global_norm() - 1.0).abs() < 1e-9);

        let mut grads = Gradients::zeros_like(&store);
        grads.accumulate(id, &array![[f64::NAN]]);
        match clip_gradients(&mut grads, &store, 1.0) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "p"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let (mut store, id) = single(0.5);
        let mut opt = AdamW::new(&store);
        let mut grads = Gradients::zeros_like(&store);
        grads.accumulate(id, &array![[1.0]]);
        let lr = 1e-3;
        opt.step(&mut store, &grads, LearningRates { encoder: lr, other: lr }, 0.0);
        let expected = 0.5 - lr / (1.0 + 1e-8);
        assert!((store.value(id)[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradients() {
        let (mut store, id) = single(0.5);
        let mut opt = AdamW::new(&store);
        let grads = Gradients::zeros_like(&store);
        let lr = LearningRates {
            encoder: 0.1,
            other: 0.1,
        };
        opt.step(&mut store, &grads, lr, 0.0);
        assert_eq!(store.value(id)[[0, 0]], 0.5);
        opt.step(&mut store, &grads, lr, 0.01);
        let v = store.value(id)[[0, 0]];
        assert!(v < 0.5 && v > 0.0);
    }

    #[test]
    fn early_stopping_returns_best_epoch() {
        let mut s = EarlyStopping::new(2);
        let decisions: Vec<_> = [0.1, 0.2, 0.2, 0.2]
            .iter()
            .enumerate()
            .map(|(i, &f)| s.observe(i + 1, f))
            .collect();
        assert_eq!(
            decisions,
            vec![
                StopDecision::Improved,
                StopDecision::Improved,
                StopDecision::Continue,
                StopDecision::Stop
            ]
        );
        assert_eq!(s.best_epoch(), Some(2));
    }

    #[test]
    fn uniform_entity_logits_give_log_three() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let e = tape.constant(Array2::zeros((5, 3)));
        let h = tape.constant(Array2::zeros((2, 2)));
        let labels = [EntityLabel::None; 5];
        let loss = total_loss(&mut tape, e, &labels, None, &[], h, h, 0.5).unwrap();
        assert!((tape.scalar(loss) - 3f64.ln()).abs() < 1e-15);
        assert!(total_loss(&mut tape, e, &[], None, &[], h, h, 0.0).is_err());
    }

    #[test]
    fn confident_correct_logits_give_vanishing_loss() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let e = tape.constant(array![[100.0, 0.0, 0.0], [0.0, 100.0, 0.0]]);
        let p = tape.constant(array![[0.0, 0.0, 0.0, 100.0]]);
        let h = tape.constant(array![[1.0, 2.0]]);
        let loss = total_loss(
            &mut tape,
            e,
            &[EntityLabel::None, EntityLabel::Aspect],
            Some(p),
            &[PairLabel::Negative],
            h,
            h,
            0.0,
        )
        .unwrap();
        assert!(tape.scalar(loss) < 1e-40);
    }

    #[test]
    fn overlapping_splits_are_a_protocol_fault() {
        let s = crate::corpus::parse_aste_line("a b####[([0], [1], 'POS')]").unwrap();
        let mut a = s.clone();
        a.id = "x-1".into();
        let split = DatasetSplit {
            train: vec![a.clone()],
            dev: vec![a],
            test: vec![],
        };
        assert!(matches!(
            train(&split, &ModelConfig::toy(), &TrainConfig::toy()),
            Err(Error::Protocol(_))
        ));
    }
}
