//! The full dual-channel model.
//!
//! ```text
//! ids ─ embeddings ─┬─ transformer encoder ── H_enc ─┬─ semantic GCN (attention graph) ── h_sem ─┐
//!                   │                                └─ projection ─────────────────────────────┐│
//!                   └─ BiLSTM ── syntactic GCN (dependency graph) ── h_syn ─────────── fuse ─────┴┴─ head
//! ```
//!
//! Token features entering the head are `[fuse(h_syn, h_sem); proj(H_enc)]`.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::{encode_tokens, Sentence, Span, Triplet, Vocab};
use crate::encoder::{AttentionMaps, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::graph::{semantic_adjacency_var, Gcn, GcnConfig};
use crate::head::{decode_triplets, enumerate_spans, select_entities, HeadConfig, TrainingSamples, TripletHead};
use crate::hfim::{fuse, FusionParams};
use crate::nn::Linear;
use crate::params::{ParamGroup, ParamStore};
use crate::syntax::{build_dep_adjacency, BiLstm, LstmConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub lstm: LstmConfig,
    pub gcn: GcnConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    fn full(encoder: EncoderConfig) -> Self {
        Self {
            encoder,
            lstm: LstmConfig::default(),
            gcn: GcnConfig::default(),
            head: HeadConfig::default(),
        }
    }

    pub fn v3_base() -> Self {
        Self::full(EncoderConfig::v3_base())
    }

    pub fn v3_large() -> Self {
        Self::full(EncoderConfig::v3_large())
    }

    pub fn v2_xxlarge() -> Self {
        Self::full(EncoderConfig::v2_xxlarge())
    }

    /// Desk-scale shape used by the acceptance runs.
    pub fn toy() -> Self {
        Self {
            encoder: EncoderConfig::toy(),
            lstm: LstmConfig {
                num_layers: 2,
                hidden_per_direction: 32,
                dropout_rate: 0.1,
            },
            gcn: GcnConfig {
                hidden_dim: 32,
                num_layers: 2,
                dropout_rate: 0.1,
            },
            head: HeadConfig {
                classifier_hidden: 64,
                ..HeadConfig::default()
            },
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "v3-base" => Some(Self::v3_base()),
            "v3-large" => Some(Self::v3_large()),
            "v2-xxlarge" => Some(Self::v2_xxlarge()),
            "toy" => Some(Self::toy()),
            _ => None,
        }
    }

    /// Width of the per-token features the head consumes.
    pub fn token_dim(&self) -> usize {
        2 * self.gcn.hidden_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.lstm.validate()?;
        self.gcn.validate()?;
        self.head.validate()
    }
}

/// A sentence ready for the model: truncated, encoded, with its graph.
#[derive(Debug, Clone)]
pub struct PreparedSentence {
    pub sentence: Sentence,
    pub ids: Vec<usize>,
    pub adjacency: Array2<f64>,
    pub candidates: Vec<Span>,
}

/// Intermediate nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct SentenceFeatures {
    pub tokens: Var,
    pub syntactic: Var,
    pub semantic: Var,
    pub attention: Vec<Vec<Var>>,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub triplets: BTreeSet<Triplet>,
    pub attention: AttentionMaps,
}

#[derive(Debug, Clone)]
pub struct DessModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub lstm: BiLstm,
    pub syntactic_gcn: Gcn,
    pub semantic_gcn: Gcn,
    pub fusion: FusionParams,
    pub encoder_projection: Linear,
    pub head: TripletHead,
}

impl DessModel {
    /// Registers and initializes every tensor. `encoder.vocab_size` is taken
    /// from `vocab`.
    pub fn new(mut config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.encoder.vocab_size = vocab.len();
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::register(&mut params, &config.encoder, &mut rng);
        let lstm = BiLstm::register(&mut params, &config.lstm, config.encoder.hidden_dim, &mut rng);
        let syntactic_gcn = Gcn::register(
            &mut params,
            "syntactic_gcn",
            &config.gcn,
            config.lstm.output_dim(),
            &mut rng,
        );
        let semantic_gcn = Gcn::register(
            &mut params,
            "semantic_gcn",
            &config.gcn,
            config.encoder.hidden_dim,
            &mut rng,
        );
        let fusion = FusionParams::register(&mut params, config.gcn.hidden_dim, &mut rng);
        let encoder_projection = Linear::register(
            &mut params,
            "encoder_projection",
            config.encoder.hidden_dim,
            config.gcn.hidden_dim,
            ParamGroup::Other,
            &mut rng,
        );
        let head = TripletHead::register(&mut params, &config.head, config.token_dim(), &mut rng);
        Ok(Self {
            config,
            vocab,
            params,
            encoder,
            lstm,
            syntactic_gcn,
            semantic_gcn,
            fusion,
            encoder_projection,
            head,
        })
    }

    pub fn prepare(&self, sentence: &Sentence) -> Result<PreparedSentence> {
        let encoded = encode_tokens(&self.vocab, sentence, self.config.encoder.max_len);
        let adjacency = build_dep_adjacency(&encoded.sentence)?.adjacency;
        let candidates = enumerate_spans(encoded.ids.len(), self.config.head.max_span);
        Ok(PreparedSentence {
            sentence: encoded.sentence,
            ids: encoded.ids,
            adjacency,
            candidates,
        })
    }

    pub fn features(
        &self,
        tape: &mut Tape<'_>,
        input: &PreparedSentence,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<SentenceFeatures> {
        let enc = self.encoder.encode(tape, &input.ids, None, rng.as_deref_mut())?;
        let lstm_out = self.lstm.encode(tape, enc.embeddings, rng.as_deref_mut())?;

        let dep = tape.constant(input.adjacency.clone());
        let syntactic = self.syntactic_gcn.forward(tape, lstm_out, dep, rng.as_deref_mut())?;

        let last = enc
            .attention
            .last()
            .ok_or_else(|| Error::Config("encoder has no layers".into()))?;
        let sem_adj = semantic_adjacency_var(tape, last);
        let semantic = self.semantic_gcn.forward(tape, enc.hidden, sem_adj, rng)?;

        let fused = fuse(tape, syntactic, semantic, &self.fusion)?;
        let projected = self.encoder_projection.forward(tape, enc.hidden);
        let tokens = tape.concat_cols(&[fused, projected]);
        Ok(SentenceFeatures {
            tokens,
            syntactic,
            semantic,
            attention: enc.attention,
        })
    }

    /// Entity and pair logits for a fixed training sample.
    pub fn sample_logits(
        &self,
        tape: &mut Tape<'_>,
        features: &SentenceFeatures,
        samples: &TrainingSamples,
    ) -> Result<(Var, Option<Var>)> {
        let entity = self.head.score_entities(tape, features.tokens, &samples.entity_spans)?;
        let pairs = if samples.pairs.is_empty() {
            None
        } else {
            Some(self.head.pair_logits(tape, features.tokens, &samples.pairs)?)
        };
        Ok((entity, pairs))
    }

    /// Deterministic inference for one sentence.
    pub fn predict(&self, input: &PreparedSentence) -> Result<Prediction> {
        let mut tape = Tape::new(&self.params);
        let features = self.features(&mut tape, input, None)?;
        let attention = AttentionMaps {
            layers: features
                .attention
                .iter()
                .map(|heads| heads.iter().map(|&h| tape.value(h).clone()).collect())
                .collect(),
        };
        let spans = &input.candidates;
        let entity = self.head.score_entities(&mut tape, features.tokens, spans)?;
        let entity_logits = tape.value(entity).clone();
        let (aspects, opinions) = select_entities(&entity_logits, spans);
        let scored = self.head.score_pairs(
            &mut tape,
            features.tokens,
            &aspects,
            &opinions,
            self.config.head.max_pairs,
        )?;
        let triplets = match scored.logits {
            Some(logits) => decode_triplets(&entity_logits, spans, tape.value(logits), &scored.pairs),
            None => BTreeSet::new(),
        };
        Ok(Prediction { triplets, attention })
    }

    pub fn predict_sentence(&self, sentence: &Sentence) -> Result<Prediction> {
        self.predict(&self.prepare(sentence)?)
    }
}
