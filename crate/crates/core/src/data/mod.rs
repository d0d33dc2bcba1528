//! Vocabulary, corpus I/O, batching and the synthetic generator.

pub mod batch;
pub mod corpus;
pub mod synthetic;
pub mod vocab;

pub use batch::{batchify, Batch, FeatureBlock};
pub use corpus::{
    load_corpus, split_paths, normalize_audio, read_features, write_corpus, write_features, MultimodalExample, RawExample,
};
pub use synthetic::{generate_synthetic, summary_template, SyntheticExample, SyntheticSpec};
pub use vocab::{tokenize, Vocabulary, BOS, EOS, PAD, UNK};
