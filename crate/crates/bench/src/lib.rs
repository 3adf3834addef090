//! Fixtures shared by the criterion benches.

use quake_pda::dataset::{LabelScheme, MetadataSchema, Sample};
use quake_pda::model::{init_model, EmbeddingVariant, ModelConfig, ModelParams};
use quake_pda::synthetic::{self, Signal, Town};

/// A town with `n` buildings on the Türkiye-L schema.
pub fn town(n: usize) -> Town {
    synthetic::town(n, MetadataSchema::turkiye_l(), LabelScheme::L4, 7)
}

/// Initialised model and samples at the given tile size.
pub fn model_and_samples(image_size: usize, n: usize) -> (ModelParams, Vec<Sample>) {
    let d = MetadataSchema::turkiye_l().len();
    let cfg = ModelConfig {
        image_size,
        n_classes: 4,
        metadata_dim: d,
        embedding_variant: EmbeddingVariant::Mlp,
        ..ModelConfig::default()
    };
    let params = init_model(&cfg, 1).expect("valid config");
    (params, synthetic::samples(n, 4, d, image_size, Signal::Metadata, 3))
}
