//! QuakeMetaFormer: convolutional stem, two MBConv stages, two
//! relative-attention transformer stages with an appended metadata token,
//! and a linear head. [`EmbeddingVariant::None`] gives the image-only model.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{file_hash, quantize, Checkpoint, CheckpointHeader, TensorEntry};
pub use config::{EmbeddingVariant, MaskSpec, ModelConfig};
pub use forward::{argmax, embed_metadata, forward, forward_sample, predict, predict_samples, Predictions};
pub(crate) use forward::{build_graph, Perturbation};
pub use params::{init_model, layout, param_count, Init, ModelParams, ParamSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite activations in {0}")]
    NonFinite(String),
    #[error("schema hash mismatch: model expects {expected}, normaliser has {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
