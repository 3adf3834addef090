use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddingVariant, ModelConfig, ModelError};
use crate::autodiff::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform with variance `1 / fan_in`.
    FanIn(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

struct Layout(Vec<ParamSpec>);

impl Layout {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) {
        self.0.push(ParamSpec { name, rows, cols, init });
    }

    fn linear(&mut self, p: &str, i: usize, o: usize) {
        self.add(format!("{p}.w"), i, o, Init::FanIn(i));
        self.add(format!("{p}.b"), 1, o, Init::Zeros);
    }

    /// Conv weight `[cout, cin / groups * k * k]` and bias `[1, cout]`.
    fn conv(&mut self, p: &str, cin_per_group: usize, cout: usize, k: usize) {
        let fan = cin_per_group * k * k;
        self.add(format!("{p}.w"), cout, fan, Init::FanIn(fan));
        self.add(format!("{p}.b"), 1, cout, Init::Zeros);
    }

    fn norm(&mut self, p: &str, d: usize) {
        self.add(format!("{p}.g"), 1, d, Init::Ones);
        self.add(format!("{p}.b"), 1, d, Init::Zeros);
    }

    fn block(&mut self, p: &str, c: usize, heads: usize, ratio: usize, rel: Option<usize>, meta: bool) {
        self.norm(&format!("{p}.ln1"), c);
        self.linear(&format!("{p}.attn.qkv"), c, 3 * c);
        self.linear(&format!("{p}.attn.proj"), c, c);
        if let Some(t) = rel {
            self.add(format!("{p}.attn.rel_bias"), heads, t, Init::Zeros);
        }
        if meta {
            self.add(format!("{p}.attn.meta_bias"), heads, 1, Init::Zeros);
        }
        self.norm(&format!("{p}.ln2"), c);
        self.linear(&format!("{p}.mlp.fc1"), c, ratio * c);
        self.linear(&format!("{p}.mlp.fc2"), ratio * c, c);
    }
}

/// Every learnable tensor in order. Shapes are `rows x cols`; linear weights
/// are stored `[in, out]`, conv weights `[out, in / groups * k * k]`.
///
/// 1. `stem` conv 3x3
/// 2. `s1.b*`, `s2.b*` MBConv blocks: `expand` 1x1, `dw` depthwise 3x3, `project` 1x1
/// 3. `embed3` conv 3x3, then `s3.b*` transformer blocks
/// 4. `embed4` conv 3x3, `meta_proj` linear (metadata only), then `s4.b*`
/// 5. `norm`, `head`
/// 6. `meta.mask_values` and the embedding variant's tensors (metadata only)
///
/// A transformer block holds `ln1`, `attn.qkv`, `attn.proj`, `attn.rel_bias`
/// `[heads, (2w - 1)^2]`, `attn.meta_bias` `[heads, 1]` (metadata only),
/// `ln2`, `mlp.fc1`, `mlp.fc2`.
pub fn layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut l = Layout(Vec::new());
    let [c0, c1, c2, c3, c4] = cfg.stage_channels;
    let meta = cfg.embedding_variant.uses_metadata();
    l.conv("stem", cfg.in_channels, c0, 3);
    for (s, (cin, cout)) in [(c0, c1), (c1, c2)].into_iter().enumerate() {
        for b in 0..cfg.blocks_per_stage {
            let ci = if b == 0 { cin } else { cout };
            let e = ci * cfg.mbconv_expansion;
            let p = format!("s{}.b{b}", s + 1);
            l.conv(&format!("{p}.expand"), ci, e, 1);
            l.conv(&format!("{p}.dw"), 1, e, 3);
            l.conv(&format!("{p}.project"), e, cout, 1);
        }
    }
    let table = |w: usize| (2 * w - 1) * (2 * w - 1);
    l.conv("embed3", c2, c3, 3);
    for b in 0..cfg.blocks_per_stage {
        let t = table(cfg.bias_window(0));
        l.block(&format!("s3.b{b}"), c3, cfg.transformer_heads[0], cfg.mlp_ratio, Some(t), meta);
    }
    l.conv("embed4", c3, c4, 3);
    if meta {
        l.linear("meta_proj", c3, c4);
    }
    for b in 0..cfg.blocks_per_stage {
        let t = table(cfg.bias_window(1));
        l.block(&format!("s4.b{b}"), c4, cfg.transformer_heads[1], cfg.mlp_ratio, Some(t), meta);
    }
    l.norm("norm", c4);
    l.linear("head", c4, cfg.n_classes);

    if meta {
        let d = cfg.metadata_dim;
        l.add("meta.mask_values".into(), 1, d, Init::Zeros);
        match cfg.embedding_variant {
            EmbeddingVariant::Mlp => {
                l.linear("meta.fc1", d, c3);
                l.linear("meta.fc2", c3, c3);
                l.norm("meta.norm", c3);
            }
            EmbeddingVariant::DeepMlp => {
                l.linear("meta.fc1", d, c3);
                for i in 2..=4 {
                    l.linear(&format!("meta.fc{i}"), c3, c3);
                }
                l.norm("meta.norm", c3);
            }
            EmbeddingVariant::ResNorm | EmbeddingVariant::DeepResNorm => {
                let blocks = if cfg.embedding_variant == EmbeddingVariant::ResNorm { 2 } else { 4 };
                l.linear("meta.input", d, c3);
                for i in 0..blocks {
                    l.linear(&format!("meta.res{i}.fc"), c3, c3);
                    l.norm(&format!("meta.res{i}.norm"), c3);
                }
            }
            EmbeddingVariant::TransformerEnc | EmbeddingVariant::LargeTransformerEnc => {
                let layers = if cfg.embedding_variant == EmbeddingVariant::TransformerEnc { 1 } else { 2 };
                l.add("meta.direction".into(), d, c3, Init::FanIn(1));
                l.add("meta.identity".into(), d, c3, Init::FanIn(c3));
                for i in 0..layers {
                    l.block(&format!("meta.enc{i}"), c3, cfg.transformer_heads[0], cfg.mlp_ratio, None, false);
                }
            }
            EmbeddingVariant::None => unreachable!(),
        }
    }
    l.0
}

pub fn param_count(cfg: &ModelConfig) -> usize {
    layout(cfg).iter().map(|p| p.rows * p.cols).sum()
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub specs: Vec<ParamSpec>,
    pub tensors: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.specs == other.specs && self.tensors == other.tensors
    }
}

impl ModelParams {
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Mat>) -> Result<Self, ModelError> {
        config.validate()?;
        let specs = layout(&config);
        if specs.len() != tensors.len() {
            return Err(ModelError::Shape(format!(
                "expected {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (s, t) in specs.iter().zip(&tensors) {
            if (s.rows, s.cols) != (t.rows, t.cols) {
                return Err(ModelError::Shape(format!(
                    "{}: expected {}x{}, got {}x{}",
                    s.name, s.rows, s.cols, t.rows, t.cols
                )));
            }
        }
        let index = specs.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
        Ok(ModelParams {
            config,
            specs,
            tensors,
            index,
        })
    }

    pub fn id(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Mat::len).sum()
    }

    /// Number of parameters in the metadata branch (mask values, embedding,
    /// `meta_proj` and attention metadata biases).
    pub fn metadata_count(&self) -> usize {
        self.specs
            .iter()
            .filter(|s| s.name.starts_with("meta") || s.name.ends_with("meta_bias"))
            .map(|s| s.rows * s.cols)
            .sum()
    }

    pub fn zeros_like(&self) -> Vec<Mat> {
        self.tensors.iter().map(|t| Mat::zeros(t.rows, t.cols)).collect()
    }
}

/// Deterministic initialisation: fan-in-scaled uniform weights, zero biases
/// and bias tables, unit layer-norm gains.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = layout(config)
        .iter()
        .map(|s| {
            let n = s.rows * s.cols;
            let data = match s.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::FanIn(f) => {
                    let a = (3.0 / f as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-a..a)).collect()
                }
            };
            Mat::from_vec(s.rows, s.cols, data)
        })
        .collect();
    ModelParams::from_tensors(config.clone(), tensors)
}
