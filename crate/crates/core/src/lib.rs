//! Dual-channel span-based aspect sentiment triplet extraction.
//!
//! A transformer with disentangled (content/relative-position) attention and
//! a BiLSTM over dependency arcs feed two graph convolution stacks whose
//! outputs are gated together and scored by a span/pair classifier head.
//! Everything runs on a small reverse-mode autodiff tape in `f64`.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod graph;
pub mod head;
pub mod hfim;
pub mod model;
pub mod nn;
pub mod params;
pub mod syntax;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
