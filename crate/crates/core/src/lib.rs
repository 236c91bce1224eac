//! Perso-Arabic pretraining data pipeline: corpus I/O, normalization,
//! noise filtering, WordPiece tokenization, whole-word dynamic masking and
//! tokenizer efficiency statistics.

pub mod corpusio;
pub mod discriminator;
pub mod masking;
pub mod normalizer;
pub mod tokenizer;
pub mod tokstats;

#[cfg(feature = "cli")]
pub mod cli;
pub mod manifest;

pub use corpusio::{read_corpus, write_corpus, CorpusError, Document};
pub use normalizer::{normalize, NormalizationConfig};
