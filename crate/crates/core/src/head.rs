//! Span-based triplet head.
//!
//! Every span up to `max_span` words is a candidate entity. A span is
//! represented as `[h_start; h_end; mean(h_start..=h_end); size(width)]`
//! and classified as NONE / ASPECT / OPINION. Aspect–opinion pairs are
//! represented as `[aspect; opinion; mean(tokens strictly between)]` and
//! classified as INVALID / POS / NEU / NEG.

use std::collections::{BTreeSet, HashMap, HashSet};

use ndarray::Array2;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Tape, Var};
use crate::corpus::{Sentence, Sentiment, Span, Triplet};
use crate::error::{Error, Result};
use crate::nn::FeedForward;
use crate::params::{ParamGroup, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub max_span: usize,
    pub neg_entity: usize,
    pub neg_triple: usize,
    pub max_pairs: usize,
    pub size_embedding_dim: usize,
    pub classifier_hidden: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            max_span: 8,
            neg_entity: 50,
            neg_triple: 50,
            max_pairs: 100,
            size_embedding_dim: 25,
            classifier_hidden: 768,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if [
            self.max_span,
            self.neg_entity,
            self.neg_triple,
            self.max_pairs,
            self.size_embedding_dim,
            self.classifier_hidden,
        ]
        .contains(&0)
        {
            return Err(Error::Config("head settings must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityLabel {
    None = 0,
    Aspect = 1,
    Opinion = 2,
}

impl EntityLabel {
    pub const COUNT: usize = 3;

    pub fn from_index(i: usize) -> Self {
        match i {
            1 => EntityLabel::Aspect,
            2 => EntityLabel::Opinion,
            _ => EntityLabel::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairLabel {
    Invalid = 0,
    Positive = 1,
    Neutral = 2,
    Negative = 3,
}

impl PairLabel {
    pub const COUNT: usize = 4;

    pub fn from_index(i: usize) -> Self {
        match i {
            1 => PairLabel::Positive,
            2 => PairLabel::Neutral,
            3 => PairLabel::Negative,
            _ => PairLabel::Invalid,
        }
    }

    pub fn sentiment(self) -> Option<Sentiment> {
        match self {
            PairLabel::Invalid => None,
            PairLabel::Positive => Some(Sentiment::Positive),
            PairLabel::Neutral => Some(Sentiment::Neutral),
            PairLabel::Negative => Some(Sentiment::Negative),
        }
    }
}

impl From<Sentiment> for PairLabel {
    fn from(s: Sentiment) -> Self {
        match s {
            Sentiment::Positive => PairLabel::Positive,
            Sentiment::Neutral => PairLabel::Neutral,
            Sentiment::Negative => PairLabel::Negative,
        }
    }
}

/// All spans of width `1..=max_span`, ordered by `(start, end)`.
pub fn enumerate_spans(seq_len: usize, max_span: usize) -> Vec<Span> {
    let mut out = Vec::new();
    for start in 0..seq_len {
        for end in start..seq_len.min(start + max_span) {
            out.push(Span { start, end });
        }
    }
    out
}

/// A candidate with the probability of its predicted label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSpan {
    /// Index into the candidate list the logits were computed for.
    pub index: usize,
    pub span: Span,
    pub confidence: f64,
}

#[derive(Debug, Clone)]
pub struct PairScores {
    /// Pairs as indices `(aspect, opinion)` into the candidate list.
    pub pairs: Vec<(usize, usize)>,
    /// `pairs.len() × 4`, `None` when there are no pairs.
    pub logits: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct TripletHead {
    pub config: HeadConfig,
    pub token_dim: usize,
    /// `max_span × size_embedding_dim`; row `w − 1` embeds width `w`.
    pub size_embeddings: ParamId,
    pub entity: FeedForward,
    pub pair: FeedForward,
}

fn pooling_row(row: &mut ndarray::ArrayViewMut1<f64>, lo: usize, hi_exclusive: usize) {
    if hi_exclusive > lo {
        let w = 1.0 / (hi_exclusive - lo) as f64;
        for t in lo..hi_exclusive {
            row[t] = w;
        }
    }
}

/// Positions strictly between two disjoint spans, as a half-open range.
fn gap(a: Span, b: Span) -> (usize, usize) {
    if a.end < b.start {
        (a.end + 1, b.start)
    } else {
        (b.end + 1, a.start)
    }
}

impl TripletHead {
    pub fn span_dim(config: &HeadConfig, token_dim: usize) -> usize {
        3 * token_dim + config.size_embedding_dim
    }

    pub fn pair_dim(config: &HeadConfig, token_dim: usize) -> usize {
        2 * Self::span_dim(config, token_dim) + token_dim
    }

    pub fn register(store: &mut ParamStore, config: &HeadConfig, token_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let span_dim = Self::span_dim(config, token_dim);
        let pair_dim = Self::pair_dim(config, token_dim);
        Self {
            config: config.clone(),
            token_dim,
            size_embeddings: store.add_uniform(
                "head.size_embeddings",
                config.max_span,
                config.size_embedding_dim,
                ParamGroup::Other,
                rng,
            ),
            entity: FeedForward::register(
                store,
                "head.entity",
                span_dim,
                config.classifier_hidden,
                EntityLabel::COUNT,
                rng,
            ),
            pair: FeedForward::register(
                store,
                "head.pair",
                pair_dim,
                config.classifier_hidden,
                PairLabel::COUNT,
                rng,
            ),
        }
    }

    /// `spans.len() × span_dim` representations.
    pub fn span_representations(&self, tape: &mut Tape<'_>, features: Var, spans: &[Span]) -> Result<Var> {
        let len = tape.shape(features).0;
        for s in spans {
            if s.end >= len {
                return Err(Error::Fault(format!(
                    "span [{}, {}] outside sequence of {len}",
                    s.start, s.end
                )));
            }
            if s.width() > self.config.max_span {
                return Err(Error::Fault(format!(
                    "span width {} exceeds max_span {}",
                    s.width(),
                    self.config.max_span
                )));
            }
        }
        let starts = tape.gather_rows(features, spans.iter().map(|s| s.start).collect());
        let ends = tape.gather_rows(features, spans.iter().map(|s| s.end).collect());
        let mut pool = Array2::zeros((spans.len(), len));
        for (r, s) in spans.iter().enumerate() {
            pooling_row(&mut pool.row_mut(r), s.start, s.end + 1);
        }
        let pool = tape.constant(pool);
        let pooled = tape.matmul(pool, features);
        let table = tape.param(self.size_embeddings);
        let sizes = tape.gather_rows(table, spans.iter().map(|s| s.width() - 1).collect());
        Ok(tape.concat_cols(&[starts, ends, pooled, sizes]))
    }

    /// `n × 3` entity logits.
    pub fn score_entities(&self, tape: &mut Tape<'_>, features: Var, spans: &[Span]) -> Result<Var> {
        let reps = self.span_representations(tape, features, spans)?;
        Ok(self.entity.forward(tape, reps))
    }

    /// `n × 4` pair logits for explicit `(aspect, opinion)` pairs.
    pub fn pair_logits(&self, tape: &mut Tape<'_>, features: Var, pairs: &[(Span, Span)]) -> Result<Var> {
        let len = tape.shape(features).0;
        for (a, o) in pairs {
            if a.overlaps(o) {
                return Err(Error::Fault(format!(
                    "pair spans [{}, {}] and [{}, {}] overlap",
                    a.start, a.end, o.start, o.end
                )));
            }
        }
        let aspects: Vec<Span> = pairs.iter().map(|p| p.0).collect();
        let opinions: Vec<Span> = pairs.iter().map(|p| p.1).collect();
        let a = self.span_representations(tape, features, &aspects)?;
        let o = self.span_representations(tape, features, &opinions)?;
        let mut pool = Array2::zeros((pairs.len(), len));
        for (r, &(x, y)) in pairs.iter().enumerate() {
            let (lo, hi) = gap(x, y);
            pooling_row(&mut pool.row_mut(r), lo, hi);
        }
        let pool = tape.constant(pool);
        let between = tape.matmul(pool, features);
        let reps = tape.concat_cols(&[a, o, between]);
        Ok(self.pair.forward(tape, reps))
    }

    /// Scores every disjoint aspect × opinion pair, keeping the `max_pairs`
    /// with the highest summed confidence. Ties keep enumeration order
    /// (aspect-major).
    pub fn score_pairs(
        &self,
        tape: &mut Tape<'_>,
        features: Var,
        aspects: &[ScoredSpan],
        opinions: &[ScoredSpan],
        max_pairs: usize,
    ) -> Result<PairScores> {
        let mut ranked: Vec<(f64, usize, &ScoredSpan, &ScoredSpan)> = Vec::new();
        for a in aspects {
            for o in opinions {
                if !a.span.overlaps(&o.span) {
                    ranked.push((a.confidence + o.confidence, ranked.len(), a, o));
                }
            }
        }
        ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        ranked.truncate(max_pairs);
        if ranked.is_empty() {
            return Ok(PairScores {
                pairs: Vec::new(),
                logits: None,
            });
        }
        let spans: Vec<(Span, Span)> = ranked.iter().map(|r| (r.2.span, r.3.span)).collect();
        let logits = self.pair_logits(tape, features, &spans)?;
        Ok(PairScores {
            pairs: ranked.iter().map(|r| (r.2.index, r.3.index)).collect(),
            logits: Some(logits),
        })
    }
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Steps (1) and (2) of decoding: spans labeled ASPECT / OPINION, with
/// lower-confidence spans overlapping a kept span of the same label
/// removed. Ordering is confidence desc, then start asc, then end asc.
pub fn select_entities(entity_logits: &Array2<f64>, spans: &[Span]) -> (Vec<ScoredSpan>, Vec<ScoredSpan>) {
    let probs = softmax_rows(entity_logits.view());
    let mut aspects = Vec::new();
    let mut opinions = Vec::new();
    for (i, span) in spans.iter().enumerate() {
        let label = argmax(entity_logits.row(i));
        let scored = ScoredSpan {
            index: i,
            span: *span,
            confidence: probs[[i, label]],
        };
        match EntityLabel::from_index(label) {
            EntityLabel::Aspect => aspects.push(scored),
            EntityLabel::Opinion => opinions.push(scored),
            EntityLabel::None => {}
        }
    }
    (suppress_overlaps(aspects), suppress_overlaps(opinions))
}

fn suppress_overlaps(mut candidates: Vec<ScoredSpan>) -> Vec<ScoredSpan> {
    candidates.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.span.start.cmp(&b.span.start))
            .then(a.span.end.cmp(&b.span.end))
    });
    let mut kept: Vec<ScoredSpan> = Vec::new();
    for c in candidates {
        if kept.iter().all(|k| !k.span.overlaps(&c.span)) {
            kept.push(c);
        }
    }
    kept
}

/// Turns entity and pair logits into triplets. `pairs[r]` indexes `spans`
/// and owns row `r` of `pair_logits`.
pub fn decode_triplets(
    entity_logits: &Array2<f64>,
    spans: &[Span],
    pair_logits: &Array2<f64>,
    pairs: &[(usize, usize)],
) -> BTreeSet<Triplet> {
    let (aspects, opinions) = select_entities(entity_logits, spans);
    let aspect_set: HashSet<usize> = aspects.iter().map(|s| s.index).collect();
    let opinion_set: HashSet<usize> = opinions.iter().map(|s| s.index).collect();
    let mut out = BTreeSet::new();
    for (r, &(a, o)) in pairs.iter().enumerate() {
        if !aspect_set.contains(&a) || !opinion_set.contains(&o) || spans[a].overlaps(&spans[o]) {
            continue;
        }
        if let Some(sentiment) = PairLabel::from_index(argmax(pair_logits.row(r))).sentiment() {
            out.insert(Triplet::new(spans[a], spans[o], sentiment));
        }
    }
    out
}

/// Classifier training targets for one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSamples {
    pub entity_spans: Vec<Span>,
    pub entity_labels: Vec<EntityLabel>,
    pub pairs: Vec<(Span, Span)>,
    pub pair_labels: Vec<PairLabel>,
    /// Gold spans not among the candidates (too wide), left out.
    pub skipped_gold_spans: usize,
}

/// Gold entities and pairs plus sampled negatives.
///
/// Entity negatives are drawn uniformly without replacement from the
/// non-gold candidates. Pair negatives first take every non-gold pairing
/// of a gold aspect with a gold opinion, then fill the remaining budget
/// uniformly from disjoint pairs that involve a sampled negative span.
pub fn sample_negatives(
    sentence: &Sentence,
    candidates: &[Span],
    neg_entity: usize,
    neg_triple: usize,
    rng: &mut ChaCha8Rng,
) -> TrainingSamples {
    let candidate_set: HashSet<Span> = candidates.iter().copied().collect();
    let mut labels: HashMap<Span, EntityLabel> = HashMap::new();
    let mut entity_spans = Vec::new();
    let mut entity_labels = Vec::new();
    let mut skipped = BTreeSet::new();
    for t in &sentence.gold {
        for (span, label) in [(t.aspect, EntityLabel::Aspect), (t.opinion, EntityLabel::Opinion)] {
            if !candidate_set.contains(&span) {
                skipped.insert(span);
                continue;
            }
            if let std::collections::hash_map::Entry::Vacant(e) = labels.entry(span) {
                e.insert(label);
                entity_spans.push(span);
                entity_labels.push(label);
            }
        }
    }
    if !skipped.is_empty() {
        log::warn!("{}: {} gold span(s) wider than max_span", sentence.id, skipped.len());
    }

    let negatives: Vec<Span> = candidates.iter().filter(|s| !labels.contains_key(s)).copied().collect();
    let take = neg_entity.min(negatives.len());
    let mut picked = sample(rng, negatives.len(), take).into_vec();
    picked.sort_unstable();
    let sampled_negatives: Vec<Span> = picked.iter().map(|&i| negatives[i]).collect();
    entity_spans.extend(&sampled_negatives);
    entity_labels.extend(std::iter::repeat_n(EntityLabel::None, sampled_negatives.len()));

    let mut pairs = Vec::new();
    let mut pair_labels = Vec::new();
    let mut gold_pairs = HashSet::new();
    for t in &sentence.gold {
        let key = (t.aspect, t.opinion);
        if labels.get(&t.aspect) == Some(&EntityLabel::Aspect)
            && labels.get(&t.opinion) == Some(&EntityLabel::Opinion)
            && gold_pairs.insert(key)
        {
            pairs.push(key);
            pair_labels.push(PairLabel::from(t.sentiment));
        }
    }

    let gold_aspects: Vec<Span> = entity_spans
        .iter()
        .zip(&entity_labels)
        .filter(|(_, l)| **l == EntityLabel::Aspect)
        .map(|(s, _)| *s)
        .collect();
    let gold_opinions: Vec<Span> = entity_spans
        .iter()
        .zip(&entity_labels)
        .filter(|(_, l)| **l == EntityLabel::Opinion)
        .map(|(s, _)| *s)
        .collect();

    let mut budget = neg_triple;
    for &a in &gold_aspects {
        for &o in &gold_opinions {
            if budget > 0 && !a.overlaps(&o) && !gold_pairs.contains(&(a, o)) {
                pairs.push((a, o));
                pair_labels.push(PairLabel::Invalid);
                budget -= 1;
            }
        }
    }

    if budget > 0 {
        let aspect_side: Vec<Span> = gold_aspects.iter().chain(&sampled_negatives).copied().collect();
        let opinion_side: Vec<Span> = gold_opinions.iter().chain(&sampled_negatives).copied().collect();
        let negative_set: HashSet<Span> = sampled_negatives.iter().copied().collect();
        let mut pool = Vec::new();
        for &a in &aspect_side {
            for &o in &opinion_side {
                if !a.overlaps(&o) && (negative_set.contains(&a) || negative_set.contains(&o)) {
                    pool.push((a, o));
                }
            }
        }
        let take = budget.min(pool.len());
        let mut picked = sample(rng, pool.len(), take).into_vec();
        picked.sort_unstable();
        for i in picked {
            pairs.push(pool[i]);
            pair_labels.push(PairLabel::Invalid);
        }
    }

    TrainingSamples {
        entity_spans,
        entity_labels,
        pairs,
        pair_labels,
        skipped_gold_spans: skipped.len(),
    }
}
