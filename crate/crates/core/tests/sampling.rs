use std::collections::HashSet;
use std::path::PathBuf;

use dess_core::corpus::{parse_aste_line, Sentence};
use dess_core::head::{enumerate_spans, sample_negatives, EntityLabel, PairLabel, TrainingSamples};
use dess_core::synthetic::review_examples;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/negatives_seed42.json")
}

fn fixture_samples() -> String {
    let sentence = review_examples().remove(1);
    let candidates = enumerate_spans(sentence.len(), 8);
    let samples = sample_negatives(&sentence, &candidates, 50, 50, &mut ChaCha8Rng::seed_from_u64(42));
    serde_json::to_string(&samples).unwrap() + "\n"
}

/// Set `DESS_BLESS=1` to re-record after an intentional sampling change.
#[test]
fn seed_42_matches_recorded_sample() {
    let got = fixture_samples();
    assert_eq!(got, fixture_samples());
    let path = golden_path();
    if std::env::var_os("DESS_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &got).unwrap();
    }
    let want = std::fs::read_to_string(&path).expect("golden file present");
    assert_eq!(got, want);
}

fn sample(sentence: &Sentence, max_span: usize, ne: usize, nt: usize, seed: u64) -> TrainingSamples {
    let candidates = enumerate_spans(sentence.len(), max_span);
    sample_negatives(sentence, &candidates, ne, nt, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn gold_spans_and_pairs_always_present() {
    for seed in 0..20 {
        for s in review_examples() {
            let t = sample(&s, 8, 5, 3, seed);
            let labeled: HashSet<_> = t.entity_spans.iter().zip(&t.entity_labels).collect();
            for g in &s.gold {
                assert!(labeled.contains(&(&g.aspect, &EntityLabel::Aspect)));
                assert!(labeled.contains(&(&g.opinion, &EntityLabel::Opinion)));
                let i = t.pairs.iter().position(|p| *p == (g.aspect, g.opinion)).unwrap();
                assert_eq!(t.pair_labels[i], PairLabel::from(g.sentiment));
            }
            let negatives = t.entity_labels.iter().filter(|l| **l == EntityLabel::None).count();
            assert_eq!(negatives, 5);
            let invalid = t.pair_labels.iter().filter(|l| **l == PairLabel::Invalid).count();
            assert!(invalid <= 3);
            let unique: HashSet<_> = t.entity_spans.iter().collect();
            assert_eq!(unique.len(), t.entity_spans.len(), "sampling is without replacement");
            assert!(t.pairs.iter().all(|(a, o)| !a.overlaps(o)));
        }
    }
}

#[test]
fn small_candidate_pool_is_used_whole() {
    let s = parse_aste_line("good food####[([1], [0], 'POS')]").unwrap();
    let t = sample(&s, 2, 50, 50, 0);
    assert_eq!(t.entity_spans.len(), 3);
    assert_eq!(t.entity_labels.iter().filter(|l| **l == EntityLabel::None).count(), 1);
}

#[test]
fn no_gold_means_no_positive_pairs() {
    let s = parse_aste_line("nothing to see here####[]").unwrap();
    let t = sample(&s, 3, 4, 4, 1);
    assert!(t.pair_labels.iter().all(|l| *l == PairLabel::Invalid));
    assert!(t.entity_labels.iter().all(|l| *l == EntityLabel::None));
}

#[test]
fn overlong_gold_spans_are_counted() {
    let s = parse_aste_line("a b c d e####[([0], [1, 2, 3, 4], 'NEG')]").unwrap();
    let t = sample(&s, 2, 3, 3, 0);
    assert_eq!(t.skipped_gold_spans, 1);
    assert!(t.pairs.is_empty() || t.pair_labels.iter().all(|l| *l == PairLabel::Invalid));
}
