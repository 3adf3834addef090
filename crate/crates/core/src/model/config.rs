use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::dataset::{MetadataSchema, SAR_FEATURES};

/// Metadata embedding used to form the fusion token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EmbeddingVariant {
    /// linear, GELU, linear, layer norm
    Mlp,
    /// input linear then two `h = LN(h + GELU(linear(h)))` blocks
    ResNorm,
    /// four linears with GELU between, then layer norm
    DeepMlp,
    /// ResNorm with four blocks
    DeepResNorm,
    /// one encoder layer over per-feature tokens, mean-pooled
    TransformerEnc,
    /// two encoder layers
    LargeTransformerEnc,
    /// image-only model: no metadata branch at all
    None,
}

impl EmbeddingVariant {
    pub fn uses_metadata(self) -> bool {
        self != EmbeddingVariant::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub in_channels: usize,
    /// Widths of the stem, MBConv stages 1-2 and transformer stages 3-4.
    pub stage_channels: [usize; 5],
    pub mbconv_expansion: usize,
    pub blocks_per_stage: usize,
    pub mlp_ratio: usize,
    pub transformer_heads: [usize; 2],
    /// Largest relative offset (per axis) with its own bias entry in stages
    /// 3 and 4; larger offsets share the edge entry. 0 covers the whole grid.
    pub relative_bias_window: [usize; 2],
    pub n_classes: usize,
    pub metadata_dim: usize,
    pub embedding_variant: EmbeddingVariant,
    /// Dropout on the pooled features during training.
    pub dropout: f64,
    /// Probability of masking each metadata feature during training.
    pub mask_dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 64,
            in_channels: 3,
            stage_channels: [16, 24, 32, 48, 64],
            mbconv_expansion: 4,
            blocks_per_stage: 2,
            mlp_ratio: 4,
            transformer_heads: [2, 4],
            relative_bias_window: [0, 0],
            n_classes: 4,
            metadata_dim: 34,
            embedding_variant: EmbeddingVariant::Mlp,
            dropout: 0.0,
            mask_dropout_rate: 0.2,
        }
    }
}

impl ModelConfig {
    /// Smallest useful configuration: 16 px tiles, channels [4, 8, 8, 8, 8].
    pub fn tiny(n_classes: usize, metadata_dim: usize, variant: EmbeddingVariant) -> Self {
        ModelConfig {
            image_size: 16,
            stage_channels: [4, 8, 8, 8, 8],
            transformer_heads: [2, 2],
            n_classes,
            metadata_dim,
            embedding_variant: variant,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.image_size < 16 || !self.image_size.is_multiple_of(16) {
            return bad(format!("image_size {} must be a positive multiple of 16", self.image_size));
        }
        if self.in_channels == 0 || self.stage_channels.contains(&0) {
            return bad("channel counts must be positive".into());
        }
        if self.mbconv_expansion == 0 || self.blocks_per_stage == 0 || self.mlp_ratio == 0 {
            return bad("expansion, depth and MLP ratio must be positive".into());
        }
        for (i, &h) in self.transformer_heads.iter().enumerate() {
            let c = self.stage_channels[3 + i];
            if h == 0 || !c.is_multiple_of(h) {
                return bad(format!("stage {} width {c} is not divisible by {h} heads", i + 3));
            }
        }
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2".into());
        }
        if self.embedding_variant.uses_metadata() {
            if self.metadata_dim == 0 {
                return bad("metadata_dim must be positive when metadata is used".into());
            }
            let c3 = self.stage_channels[3];
            if matches!(
                self.embedding_variant,
                EmbeddingVariant::TransformerEnc | EmbeddingVariant::LargeTransformerEnc
            ) && !c3.is_multiple_of(self.transformer_heads[0])
            {
                return bad("stage 3 width must be divisible by the stage 3 head count".into());
            }
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.mask_dropout_rate) {
            return bad("dropout rates must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Spatial side after the stem (index 0) and after each later stage.
    pub fn grid_sides(&self) -> [usize; 5] {
        let mut s = [0; 5];
        let mut n = self.image_size;
        for v in &mut s {
            n = n.div_ceil(2);
            *v = n;
        }
        s
    }

    /// Bias window (max offset + 1) of transformer stage `i` (0 or 1).
    pub fn bias_window(&self, i: usize) -> usize {
        let side = self.grid_sides()[3 + i];
        match self.relative_bias_window[i] {
            0 => side,
            w => w.min(side),
        }
    }
}

/// Metadata features hidden from the model at inference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub bits: Vec<bool>,
}

impl MaskSpec {
    pub fn none(d: usize) -> Self {
        MaskSpec { bits: vec![false; d] }
    }

    pub fn all(d: usize) -> Self {
        MaskSpec { bits: vec![true; d] }
    }

    pub fn from_names<S: AsRef<str>>(schema: &MetadataSchema, names: &[S]) -> Result<Self, ModelError> {
        let mut bits = vec![false; schema.len()];
        for n in names {
            let j = schema
                .position(n.as_ref())
                .ok_or_else(|| ModelError::Config(format!("unknown metadata feature {:?}", n.as_ref())))?;
            bits[j] = true;
        }
        Ok(MaskSpec { bits })
    }

    /// SAR-VV, SAR-VH and DPM.
    pub fn sar(schema: &MetadataSchema) -> Result<Self, ModelError> {
        Self::from_names(schema, &SAR_FEATURES)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}
