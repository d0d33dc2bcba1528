//! Trimodal hierarchical attention for multimodal abstractive summarization:
//! a small reverse-mode autodiff engine, recurrent modality encoders, the
//! attention hierarchy, a conditional GRU decoder with beam search, training,
//! data handling and evaluation metrics.

pub mod attention;
pub mod data;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod init;
pub mod model;
pub mod tensor;
pub mod training;

pub use attention::{cumulative_attention, CumulativeAttention, HierarchicalAttentionWeights, AUDIO_GROUP};
pub use data::{Batch, MultimodalExample, RawExample, Vocabulary};
pub use decoder::{beam_search_decode, greedy_decode, summarize, Decoded, StepModel};
pub use encoders::{ModalityEncoding, ModalityKind};
pub use error::{Error, Result};
pub use model::{Dims, Model, ModelConfig, ModelInput, Variant};
pub use tensor::{ParamId, ParamStore, Tape, Tensor, Var};
pub use training::{fit, TrainConfig, TrainingReport};
