//! Exact-match triplet scoring and error categorization.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Triplet;
use crate::error::{Error, Result};

/// Triplets per sentence id.
pub type TripletsById = BTreeMap<String, BTreeSet<Triplet>>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }

    /// JSON object with keys precision, recall, f1, tp, fp, fn.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("metrics serialize")
    }
}

fn check_ids(pred: &TripletsById, gold: &TripletsById) -> Result<()> {
    if pred.len() != gold.len() || pred.keys().zip(gold.keys()).any(|(a, b)| a != b) {
        let missing: Vec<_> = gold.keys().filter(|k| !pred.contains_key(*k)).take(3).collect();
        let extra: Vec<_> = pred.keys().filter(|k| !gold.contains_key(*k)).take(3).collect();
        return Err(Error::Fault(format!(
            "prediction ids do not match gold ids (missing {missing:?}, unexpected {extra:?})"
        )));
    }
    Ok(())
}

/// Micro-averaged exact match over all sentences.
pub fn exact_match(pred: &TripletsById, gold: &TripletsById) -> Result<Metrics> {
    check_ids(pred, gold)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (id, p) in pred {
        let g = &gold[id];
        let hits = p.intersection(g).count();
        tp += hits;
        fp += p.len() - hits;
        fn_ += g.len() - hits;
    }
    Ok(Metrics::from_counts(tp, fp, fn_))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub missed_triplet: usize,
    pub spurious_triplet: usize,
    pub boundary_error: usize,
    pub sentiment_error: usize,
}

impl ErrorReport {
    fn merge(&mut self, other: ErrorReport) {
        self.missed_triplet += other.missed_triplet;
        self.spurious_triplet += other.spurious_triplet;
        self.boundary_error += other.boundary_error;
        self.sentiment_error += other.sentiment_error;
    }
}

/// Diagnoses one sentence. Each unmatched gold triplet is, in order of
/// precedence: a sentiment error (an unconsumed prediction has both spans
/// exactly right), a boundary error (an unconsumed prediction overlaps both
/// spans), or missed. Predictions consumed by a diagnosis are not counted
/// again; all others left unmatched are spurious.
pub fn categorize_sentence(pred: &BTreeSet<Triplet>, gold: &BTreeSet<Triplet>) -> ErrorReport {
    let mut report = ErrorReport::default();
    let mut free: Vec<Triplet> = pred.difference(gold).copied().collect();
    let unmatched_gold: Vec<Triplet> = gold.difference(pred).copied().collect();

    let mut pending = Vec::new();
    for g in unmatched_gold {
        if let Some(i) = free.iter().position(|p| p.aspect == g.aspect && p.opinion == g.opinion) {
            free.remove(i);
            report.sentiment_error += 1;
        } else {
            pending.push(g);
        }
    }
    for g in pending {
        if let Some(i) = free
            .iter()
            .position(|p| p.aspect.overlaps(&g.aspect) && p.opinion.overlaps(&g.opinion))
        {
            free.remove(i);
            report.boundary_error += 1;
        } else {
            report.missed_triplet += 1;
        }
    }
    report.spurious_triplet = free.len();
    report
}

pub fn categorize_errors(pred: &TripletsById, gold: &TripletsById) -> Result<ErrorReport> {
    check_ids(pred, gold)?;
    let mut report = ErrorReport::default();
    for (id, p) in pred {
        report.merge(categorize_sentence(p, &gold[id]));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sentiment, Span};

    fn t(a: (usize, usize), o: (usize, usize), s: Sentiment) -> Triplet {
        Triplet::new(Span::new(a.0, a.1).unwrap(), Span::new(o.0, o.1).unwrap(), s)
    }

    fn one(id: &str, ts: &[Triplet]) -> TripletsById {
        BTreeMap::from([(id.to_owned(), ts.iter().copied().collect())])
    }

    #[test]
    fn half_overlap_scores_one_half() {
        let t1 = t((0, 0), (1, 1), Sentiment::Positive);
        let t2 = t((2, 2), (3, 3), Sentiment::Negative);
        let t3 = t((4, 4), (5, 5), Sentiment::Neutral);
        let m = exact_match(&one("s", &[t1, t2]), &one("s", &[t1, t3])).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
        assert_eq!((m.tp, m.fp, m.fn_), (1, 1, 1));
    }

    #[test]
    fn empty_predictions_score_zero() {
        let m = exact_match(&TripletsById::new(), &TripletsById::new()).unwrap();
        assert_eq!(m, Metrics::from_counts(0, 0, 0));
        assert_eq!(m.f1, 0.0);
    }

    #[test]
    fn mismatched_ids_fault() {
        assert!(exact_match(&one("a", &[]), &one("b", &[])).is_err());
    }

    #[test]
    fn sentiment_error_takes_precedence() {
        let gold = t((0, 0), (2, 2), Sentiment::Negative);
        let wrong_sentiment = t((0, 0), (2, 2), Sentiment::Positive);
        let r = categorize_sentence(&[wrong_sentiment].into(), &[gold].into());
        assert_eq!(
            r,
            ErrorReport {
                sentiment_error: 1,
                ..Default::default()
            }
        );
    }

    #[test]
    fn all_missed_and_all_spurious() {
        let g: BTreeSet<_> = [
            t((0, 0), (1, 1), Sentiment::Positive),
            t((2, 2), (3, 3), Sentiment::Positive),
            t((4, 4), (5, 5), Sentiment::Positive),
        ]
        .into();
        let r = categorize_sentence(&BTreeSet::new(), &g);
        assert_eq!(r.missed_triplet, 3);
        let r = categorize_sentence(&g, &BTreeSet::new());
        assert_eq!(r.spurious_triplet, 3);
        assert_eq!(categorize_sentence(&g, &g), ErrorReport::default());
    }

    #[test]
    fn metrics_json_keys() {
        let v = Metrics::from_counts(1, 0, 1).to_json();
        for key in ["precision", "recall", "f1", "tp", "fp", "fn"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
