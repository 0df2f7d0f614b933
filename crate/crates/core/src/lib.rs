//! Vocabulary expansion for multilingual encoders.
//!
//! The crate screens the source-language part of a base model's vocabulary,
//! induces a WordPiece vocabulary for the target language, trains and aligns
//! subword-aware static embeddings for both languages, and initializes every
//! new token's embedding row as a similarity-weighted average of base-model
//! rows of its nearest source tokens.

pub mod align;
pub mod cli;
pub mod corpus_io;
pub mod embed_io;
pub mod embed_trainer;
pub mod error;
pub mod fixture;
pub mod pipeline;
pub mod synth;
pub mod transplant;
pub mod vocab;

pub use error::{Error, Result};
