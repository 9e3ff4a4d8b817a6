//! Two-stage multi-document summarization: a learned paragraph ranker feeds
//! a hierarchical transformer encoder-decoder.

pub mod baselines;
pub mod beam;
pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graphs;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod pipeline;
pub mod ranker;
pub mod rouge;
pub mod synth;
pub mod text;
pub mod tfidf;
pub mod training;

pub use error::{Error, Result};
