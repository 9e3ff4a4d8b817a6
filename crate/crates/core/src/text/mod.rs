//! Subword vocabulary and dataset ingestion.

pub mod bpe;
pub mod dataset;

pub use bpe::{bpe_train, TokenId, TokenSeq, Vocab, BOS, EOS, PAD, UNK};
pub use dataset::{clone_filter, load_dataset, Instance, Record};
