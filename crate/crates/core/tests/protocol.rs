mod common;

use dess_core::autodiff::{log_sum_exp, softmax_rows, Tape};
use dess_core::checkpoint::{load_checkpoint, save_checkpoint};
use dess_core::corpus::{DatasetSplit, Sentence, Vocab};
use dess_core::evaluation::{exact_match, Metrics};
use dess_core::head::sample_negatives;
use dess_core::model::{DessModel, ModelConfig, PreparedSentence};
use dess_core::params::ParamStore;
use dess_core::synthetic::{generate, overfit_split};
use dess_core::training::{
    batch_loss, clip_gradients, evaluate_split, gold_by_id, lr_multiplier, predict_all, total_loss, train, train_with,
    write_log_csv, AdamW, DevEvaluator, LearningRates, TrainConfig,
};
use dess_core::{Error, Result};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn short_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        ..TrainConfig::toy()
    }
}

fn small_split() -> DatasetSplit {
    DatasetSplit {
        train: generate(6, 1, "train"),
        dev: generate(2, 2, "dev"),
        test: generate(2, 3, "test"),
    }
}

struct Scripted {
    f1: Vec<f64>,
    seen: Vec<ParamStore>,
}

impl DevEvaluator for Scripted {
    fn evaluate(&mut self, model: &DessModel, _: &[Sentence]) -> Result<Metrics> {
        let f1 = self.f1[self.seen.len()];
        self.seen.push(model.params.clone());
        Ok(Metrics {
            f1,
            ..Metrics::default()
        })
    }
}

#[test]
fn early_stopping_keeps_best_dev_checkpoint() {
    let mut dev = Scripted {
        f1: vec![0.1, 0.2, 0.2, 0.2, 0.9, 0.9],
        seen: Vec::new(),
    };
    let config = TrainConfig {
        patience: 2,
        ..short_config(6)
    };
    let out = train_with(&small_split(), &ModelConfig::toy(), &config, &mut dev).unwrap();
    assert_eq!(out.log.len(), 4);
    assert!(out.stopped_early);
    assert_eq!(out.best.epoch, 2);
    assert_eq!(out.best.dev.f1, 0.2);
    let snapshot = &dev.seen[1];
    for ((_, a), (_, b)) in snapshot.iter().zip(out.best.model.params.iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
    assert_ne!(
        dev.seen[1].iter().next().unwrap().1.value,
        dev.seen[3].iter().next().unwrap().1.value
    );
}

#[test]
fn updates_come_only_from_training_batches() {
    let split = small_split();
    let config = TrainConfig {
        batch_size: 4,
        ..short_config(3)
    };
    let out = train(&split, &ModelConfig::toy(), &config).unwrap();
    let c = out.counters;
    assert_eq!(c.train_batches_per_epoch, 2);
    assert_eq!(c.backward_passes, c.epochs_run * c.train_batches_per_epoch);
    assert_eq!((c.dev_updates, c.test_updates), (0, 0));
    assert_eq!(c.dev_evaluations, c.epochs_run);
    assert_eq!(c.test_evaluations, 1);
    assert_eq!(out.test, evaluate_split(&out.best.model, &split.test).unwrap());
}

#[test]
fn shared_ids_are_rejected() {
    let mut split = small_split();
    split.test.push(split.train[0].clone());
    assert!(matches!(
        train(&split, &ModelConfig::toy(), &short_config(1)),
        Err(Error::Protocol(_))
    ));
    let mut split = small_split();
    split.train.clear();
    assert!(train(&split, &ModelConfig::toy(), &short_config(1)).is_err());
}

#[test]
fn same_seed_same_log() {
    let split = small_split();
    let a = train(&split, &ModelConfig::toy(), &short_config(3)).unwrap();
    let b = train(&split, &ModelConfig::toy(), &short_config(3)).unwrap();
    assert_eq!(a.log, b.log);
    let c = train(
        &split,
        &ModelConfig::toy(),
        &TrainConfig {
            seed: 7,
            ..short_config(3)
        },
    )
    .unwrap();
    assert_ne!(a.log[0].train_loss, c.log[0].train_loss);
}

fn ce(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| log_sum_exp(logits.row(i).iter().copied()) - logits[[i, y]])
        .sum::<f64>()
        / labels.len() as f64
}

#[test]
fn total_loss_is_the_sum_of_its_parts() {
    let sentence = common::review_sentence();
    let vocab = Vocab::build(std::slice::from_ref(&sentence), 1);
    let model = DessModel::new(ModelConfig::toy(), vocab, 3).unwrap();
    let input = model.prepare(&sentence).unwrap();
    let samples = sample_negatives(
        &input.sentence,
        &input.candidates,
        10,
        10,
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    let mut tape = Tape::new(&model.params);
    let f = model.features(&mut tape, &input, None).unwrap();
    let (entity, pairs) = model.sample_logits(&mut tape, &f, &samples).unwrap();
    let pairs = pairs.unwrap();
    let lambda = 0.3;
    let loss = total_loss(
        &mut tape,
        entity,
        &samples.entity_labels,
        Some(pairs),
        &samples.pair_labels,
        f.syntactic,
        f.semantic,
        lambda,
    )
    .unwrap();

    let entity_labels: Vec<usize> = samples.entity_labels.iter().map(|l| *l as usize).collect();
    let pair_labels: Vec<usize> = samples.pair_labels.iter().map(|l| *l as usize).collect();
    let (syn, sem) = (tape.value(f.syntactic), tape.value(f.semantic));
    let p = softmax_rows(sem.view());
    let q = softmax_rows(syn.view());
    let kl = p
        .iter()
        .zip(q.iter())
        .map(|(&p, &q)| if p == 0.0 { 0.0 } else { p * (p.ln() - q.ln()) })
        .sum::<f64>()
        / sem.nrows() as f64;
    let want = ce(tape.value(entity), &entity_labels) + ce(tape.value(pairs), &pair_labels) + lambda * kl;
    assert!(
        (tape.scalar(loss) - want).abs() <= 1e-12,
        "{} vs {want}",
        tape.scalar(loss)
    );
}

/// Uses the toy preset's own update rule: scheduled lr over a 300-epoch,
/// 4-batch run, clipping and decay.
#[test]
fn loss_decreases_on_a_fixed_batch() {
    let config = TrainConfig::toy();
    let total_steps = config.epochs * 4;
    let sentences = generate(4, 9, "b");
    let vocab = Vocab::build(&sentences, 1);
    let mut model = DessModel::new(ModelConfig::toy(), vocab, 9).unwrap();
    let prepared: Vec<PreparedSentence> = sentences.iter().map(|s| model.prepare(s).unwrap()).collect();
    let batch: Vec<&PreparedSentence> = prepared.iter().collect();
    let mut opt = AdamW::new(&model.params);
    let mut previous = f64::INFINITY;
    for step in 0..20 {
        let (loss, mut grads) = {
            let mut tape = Tape::new(&model.params);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let loss = batch_loss(&mut tape, &model, &batch, config.kl_weight, &mut rng, false).unwrap();
            (tape.scalar(loss), tape.backward(loss))
        };
        assert!(loss <= previous + 1e-6, "step {step}: {loss} after {previous}");
        previous = loss;
        clip_gradients(&mut grads, &model.params, config.max_grad_norm).unwrap();
        let factor = lr_multiplier(step, total_steps, config.warmup_ratio);
        let rates = LearningRates {
            encoder: config.lr_encoder * factor,
            other: config.lr_other * factor,
        };
        opt.step(&mut model.params, &grads, rates, config.weight_decay);
    }
}

#[test]
fn evaluation_conventions() {
    let split = overfit_split(0);
    let vocab = Vocab::build(&split.train, 1);
    let model = DessModel::new(ModelConfig::toy(), vocab, 0).unwrap();
    assert_eq!(evaluate_split(&model, &[]).unwrap(), Metrics::from_counts(0, 0, 0));
    let gold = gold_by_id(&split.train);
    assert_eq!(exact_match(&gold, &gold).unwrap().f1, 1.0);
    let a = evaluate_split(&model, &split.dev).unwrap();
    assert_eq!(a, evaluate_split(&model, &split.dev).unwrap());
}

#[test]
fn checkpoint_reload_reproduces_predictions() {
    let split = small_split();
    let out = train(&split, &ModelConfig::toy(), &short_config(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.ckpt");
    save_checkpoint(&path, &out.best).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.epoch, out.best.epoch);
    assert_eq!(
        predict_all(&back.model, &split.dev).unwrap(),
        predict_all(&out.best.model, &split.dev).unwrap()
    );
    let sentence = &split.dev[0];
    let a = back.model.predict_sentence(sentence).unwrap().attention;
    let b = out.best.model.predict_sentence(sentence).unwrap().attention;
    assert_eq!(a, b);

    let log = dir.path().join("log.csv");
    write_log_csv(&log, &out.log).unwrap();
    let text = std::fs::read_to_string(&log).unwrap();
    assert!(text.starts_with("epoch,train_loss,dev_P,dev_R,dev_F1,lr\n"));
    assert_eq!(text.lines().count(), out.log.len() + 1);
}
