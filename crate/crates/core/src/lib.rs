//! Paraphrase-corpus mining and paraphrastic sentence embeddings.
//!
//! The crate scores, filters and analyzes reference/back-translation pairs,
//! trains word-averaging (AVG) and gated recurrent averaging (GRAN) sentence
//! encoders with a margin loss over in-batch negatives, and evaluates the
//! resulting embeddings by Pearson correlation on STS-format files.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod embedder;
pub mod error;
pub mod evaluation;
pub mod filters;
pub mod linalg;
pub mod ngram_lm;
pub mod optim;
pub mod refclass;
pub mod synthgen;
pub mod textstats;
pub mod trainer;

pub use error::{Error, Result};
