use rayon::prelude::*;

use super::{EmbeddingVariant, MaskSpec, ModelError, ModelParams};
use crate::autodiff::{softmax, ConvGeom, Mat, Tape, Var};
use crate::dataset::{BuildingRecord, MetadataVector, Normalizer, Sample};

/// Per-pass randomness drawn by the trainer. Inference uses the default.
#[derive(Debug, Clone, Default)]
pub(crate) struct Perturbation {
    /// Extra metadata features masked for this pass.
    pub feature_drop: Option<Vec<bool>>,
    /// Multiplier (0 or 1 / (1 - p)) per pooled feature.
    pub dropout: Option<Vec<f64>>,
}

struct Graph<'a, 'p> {
    t: &'a mut Tape<'p>,
    p: &'a ModelParams,
}

impl Graph<'_, '_> {
    fn param(&mut self, name: &str) -> Var {
        let id = self.p.id(name);
        self.t.param(id)
    }

    fn linear(&mut self, x: Var, name: &str) -> Var {
        let w = self.param(&format!("{name}.w"));
        let b = self.param(&format!("{name}.b"));
        let y = self.t.matmul(x, w);
        self.t.add_row(y, b)
    }

    fn norm(&mut self, x: Var, name: &str) -> Var {
        let g = self.param(&format!("{name}.g"));
        let b = self.param(&format!("{name}.b"));
        self.t.layer_norm(x, g, b)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, x: Var, name: &str, cin: usize, cout: usize, side: usize, k: usize, stride: usize, groups: usize) -> (Var, usize) {
        let g = ConvGeom {
            in_channels: cin,
            out_channels: cout,
            height: side,
            width: side,
            kernel: k,
            stride,
            pad: k / 2,
            groups,
        };
        let w = self.param(&format!("{name}.w"));
        let b = self.param(&format!("{name}.b"));
        (self.t.conv2d(x, w, b, g), g.out_hw().0)
    }

    fn mbconv(&mut self, x: Var, name: &str, cin: usize, cout: usize, side: usize, stride: usize) -> (Var, usize) {
        let e = cin * self.p.config.mbconv_expansion;
        let (h, _) = self.conv(x, &format!("{name}.expand"), cin, e, side, 1, 1, 1);
        let h = self.t.gelu(h);
        let (h, s2) = self.conv(h, &format!("{name}.dw"), e, e, side, 3, stride, e);
        let h = self.t.gelu(h);
        let (h, _) = self.conv(h, &format!("{name}.project"), e, cout, s2, 1, 1, 1);
        if cin == cout && stride == 1 {
            (self.t.add(x, h), s2)
        } else {
            (h, s2)
        }
    }

    /// Pre-norm transformer block over `x [n, c]`; `bias` gives one
    /// `[n, n]` additive attention bias per head.
    fn block(&mut self, x: Var, name: &str, heads: usize, bias: Option<&[Var]>) -> Var {
        let c = self.t.value(x).cols;
        let dh = c / heads;
        let h = self.norm(x, &format!("{name}.ln1"));
        let qkv = self.linear(h, &format!("{name}.attn.qkv"));
        let mut outs = Vec::with_capacity(heads);
        for i in 0..heads {
            let q = self.t.slice_cols(qkv, i * dh, (i + 1) * dh);
            let k = self.t.slice_cols(qkv, c + i * dh, c + (i + 1) * dh);
            let v = self.t.slice_cols(qkv, 2 * c + i * dh, 2 * c + (i + 1) * dh);
            let kt = self.t.transpose(k);
            let s = self.t.matmul(q, kt);
            let mut s = self.t.scale(s, 1.0 / (dh as f64).sqrt());
            if let Some(b) = bias {
                s = self.t.add(s, b[i]);
            }
            let a = self.t.softmax_rows(s);
            outs.push(self.t.matmul(a, v));
        }
        let o = self.t.concat_cols(&outs);
        let o = self.linear(o, &format!("{name}.attn.proj"));
        let x = self.t.add(x, o);
        let h = self.norm(x, &format!("{name}.ln2"));
        let h = self.linear(h, &format!("{name}.mlp.fc1"));
        let h = self.t.gelu(h);
        let h = self.linear(h, &format!("{name}.mlp.fc2"));
        self.t.add(x, h)
    }

    /// Per-head `[n, n]` bias matrices for a `side x side` grid, plus a final
    /// metadata token when `meta` is set.
    fn attention_bias(&mut self, name: &str, heads: usize, side: usize, window: usize, meta: bool) -> Vec<Var> {
        let table = self.param(&format!("{name}.attn.rel_bias"));
        let span = 2 * window - 1;
        let t_len = span * span;
        let (src, stride) = if meta {
            let mb = self.param(&format!("{name}.attn.meta_bias"));
            (self.t.concat_cols(&[table, mb]), t_len + 1)
        } else {
            (table, t_len)
        };
        let n_sp = side * side;
        let n = n_sp + usize::from(meta);
        let lim = window as isize - 1;
        let mut rel = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                rel.push(if i >= n_sp || j >= n_sp {
                    t_len
                } else {
                    let dy = ((i / side) as isize - (j / side) as isize).clamp(-lim, lim) + lim;
                    let dx = ((i % side) as isize - (j % side) as isize).clamp(-lim, lim) + lim;
                    dy as usize * span + dx as usize
                });
            }
        }
        (0..heads)
            .map(|h| self.t.gather(src, rel.iter().map(|r| h * stride + r).collect(), n, n))
            .collect()
    }

    /// Metadata values with masked entries replaced by the learned mask
    /// values, as a `[1, d]` row.
    fn masked_metadata(&mut self, values: &[f64], mask: &[bool]) -> Var {
        let keep: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
        let take: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let kept: Vec<f64> = values.iter().zip(&keep).map(|(v, k)| v * k).collect();
        let x = self.t.constant(Mat::row(kept));
        let sel = self.t.constant(Mat::row(take));
        let mv = self.param("meta.mask_values");
        let fill = self.t.mul(mv, sel);
        self.t.add(x, fill)
    }

    fn embed(&mut self, x: Var) -> Var {
        let variant = self.p.config.embedding_variant;
        match variant {
            EmbeddingVariant::Mlp | EmbeddingVariant::DeepMlp => {
                let n = if variant == EmbeddingVariant::Mlp { 2 } else { 4 };
                let mut h = x;
                for i in 1..=n {
                    h = self.linear(h, &format!("meta.fc{i}"));
                    if i < n {
                        h = self.t.gelu(h);
                    }
                }
                self.norm(h, "meta.norm")
            }
            EmbeddingVariant::ResNorm | EmbeddingVariant::DeepResNorm => {
                let n = if variant == EmbeddingVariant::ResNorm { 2 } else { 4 };
                let mut h = self.linear(x, "meta.input");
                for i in 0..n {
                    let f = self.linear(h, &format!("meta.res{i}.fc"));
                    let f = self.t.gelu(f);
                    let s = self.t.add(h, f);
                    h = self.norm(s, &format!("meta.res{i}.norm"));
                }
                h
            }
            EmbeddingVariant::TransformerEnc | EmbeddingVariant::LargeTransformerEnc => {
                let n = if variant == EmbeddingVariant::TransformerEnc { 1 } else { 2 };
                let col = self.t.transpose(x);
                let dir = self.param("meta.direction");
                let id = self.param("meta.identity");
                let tok = self.t.mul_col(dir, col);
                let mut h = self.t.add(tok, id);
                for i in 0..n {
                    h = self.block(h, &format!("meta.enc{i}"), self.p.config.transformer_heads[0], None);
                }
                self.t.mean_rows(h)
            }
            EmbeddingVariant::None => unreachable!("image-only models have no embedding"),
        }
    }
}

fn check_finite(t: &Tape, v: Var, layer: &str) -> Result<(), ModelError> {
    if t.value(v).data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite(layer.to_string()))
    }
}

/// Records the full forward pass on `t` and returns the `[1, K]` logits.
/// `mask` is the effective metadata mask (data mask OR inference mask).
pub(crate) fn build_graph(
    t: &mut Tape,
    p: &ModelParams,
    image: &[f64],
    metadata: Option<(&[f64], &[bool])>,
    noise: &Perturbation,
) -> Result<Var, ModelError> {
    let cfg = &p.config;
    let s = cfg.image_size;
    if image.len() != cfg.in_channels * s * s {
        return Err(ModelError::Shape(format!(
            "image has {} values, expected {}x{s}x{s}",
            image.len(),
            cfg.in_channels
        )));
    }
    let uses_meta = cfg.embedding_variant.uses_metadata();
    if uses_meta {
        match metadata {
            Some((v, m)) if v.len() == cfg.metadata_dim && m.len() == cfg.metadata_dim => {}
            _ => {
                return Err(ModelError::Shape(format!(
                    "metadata must have {} values and mask bits",
                    cfg.metadata_dim
                )))
            }
        }
    }
    let [c0, c1, c2, c3, c4] = cfg.stage_channels;
    let mut g = Graph { t, p };

    let x = g.t.constant(Mat::from_vec(cfg.in_channels, s * s, image.to_vec()));
    let (x, side) = g.conv(x, "stem", cfg.in_channels, c0, s, 3, 2, 1);
    let mut x = g.t.gelu(x);
    let mut side = side;
    for (st, (cin, cout)) in [(c0, c1), (c1, c2)].into_iter().enumerate() {
        for b in 0..cfg.blocks_per_stage {
            let (ci, stride) = if b == 0 { (cin, 2) } else { (cout, 1) };
            (x, side) = g.mbconv(x, &format!("s{}.b{b}", st + 1), ci, cout, side, stride);
        }
        check_finite(g.t, x, &format!("stage {}", st + 1))?;
    }

    let (x, side3) = g.conv(x, "embed3", c2, c3, side, 3, 2, 1);
    let n3 = side3 * side3;
    let spatial = g.t.transpose(x);
    let meta_token = if uses_meta {
        let (v, m) = metadata.expect("checked above");
        let mask: Vec<bool> = match &noise.feature_drop {
            Some(d) => m.iter().zip(d).map(|(a, b)| *a || *b).collect(),
            None => m.to_vec(),
        };
        let xm = g.masked_metadata(v, &mask);
        let tok = g.embed(xm);
        check_finite(g.t, tok, "metadata embedding")?;
        Some(tok)
    } else {
        None
    };
    let mut x = match meta_token {
        Some(tok) => g.t.concat_rows(&[spatial, tok]),
        None => spatial,
    };
    for b in 0..cfg.blocks_per_stage {
        let name = format!("s3.b{b}");
        let bias = g.attention_bias(&name, cfg.transformer_heads[0], side3, cfg.bias_window(0), uses_meta);
        x = g.block(x, &name, cfg.transformer_heads[0], Some(&bias));
    }
    check_finite(g.t, x, "stage 3")?;

    let sp = g.t.slice_rows(x, 0, n3);
    let img = g.t.transpose(sp);
    let (y, side4) = g.conv(img, "embed4", c3, c4, side3, 3, 2, 1);
    let sp4 = g.t.transpose(y);
    let mut x = if uses_meta {
        let tok = g.t.slice_rows(x, n3, n3 + 1);
        let tok = g.linear(tok, "meta_proj");
        g.t.concat_rows(&[sp4, tok])
    } else {
        sp4
    };
    for b in 0..cfg.blocks_per_stage {
        let name = format!("s4.b{b}");
        let bias = g.attention_bias(&name, cfg.transformer_heads[1], side4, cfg.bias_window(1), uses_meta);
        x = g.block(x, &name, cfg.transformer_heads[1], Some(&bias));
    }
    check_finite(g.t, x, "stage 4")?;

    let x = g.norm(x, "norm");
    let mut pooled = g.t.mean_rows(x);
    if let Some(d) = &noise.dropout {
        let m = g.t.constant(Mat::row(d.clone()));
        pooled = g.t.mul(pooled, m);
    }
    let logits = g.linear(pooled, "head");
    check_finite(g.t, logits, "head")?;
    Ok(logits)
}

fn effective_mask(metadata: &MetadataVector, mask: &MaskSpec) -> Result<Vec<bool>, ModelError> {
    if mask.bits.len() != metadata.mask.len() {
        return Err(ModelError::Shape(format!(
            "mask spec has {} bits for {} metadata features",
            mask.bits.len(),
            metadata.mask.len()
        )));
    }
    Ok(metadata.mask.iter().zip(&mask.bits).map(|(a, b)| *a || *b).collect())
}

/// Logits for one normalised image (`[3, H, W]` channel-major) and metadata
/// vector. The metadata is ignored by image-only models.
pub fn forward(
    params: &ModelParams,
    image: &[f64],
    metadata: &MetadataVector,
    mask: &MaskSpec,
) -> Result<Vec<f64>, ModelError> {
    let mut t = Tape::new(&params.tensors);
    let out = if params.config.embedding_variant.uses_metadata() {
        let m = effective_mask(metadata, mask)?;
        build_graph(&mut t, params, image, Some((&metadata.values, &m)), &Perturbation::default())?
    } else {
        build_graph(&mut t, params, image, None, &Perturbation::default())?
    };
    Ok(t.value(out).data.clone())
}

pub fn forward_sample(params: &ModelParams, sample: &Sample, mask: &MaskSpec) -> Result<Vec<f64>, ModelError> {
    forward(params, &sample.image, &sample.metadata, mask)
}

/// The fusion token for metadata values whose masked entries have already
/// been replaced.
pub fn embed_metadata(params: &ModelParams, values: &[f64]) -> Result<Vec<f64>, ModelError> {
    if !params.config.embedding_variant.uses_metadata() {
        return Err(ModelError::Config("image-only model has no metadata embedding".into()));
    }
    if values.len() != params.config.metadata_dim {
        return Err(ModelError::Shape(format!(
            "metadata has {} values, expected {}",
            values.len(),
            params.config.metadata_dim
        )));
    }
    let mut t = Tape::new(&params.tensors);
    let mut g = Graph { t: &mut t, p: params };
    let x = g.t.constant(Mat::row(values.to_vec()));
    let tok = g.embed(x);
    Ok(t.value(tok).data.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub probabilities: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Softmax probabilities and argmax labels for already-normalised samples.
/// Evaluated in parallel; output order follows the input.
pub fn predict_samples(params: &ModelParams, samples: &[Sample], mask: &MaskSpec) -> Result<Predictions, ModelError> {
    let probabilities = samples
        .par_iter()
        .map(|s| forward_sample(params, s, mask).map(|l| softmax(&l)))
        .collect::<Result<Vec<_>, _>>()?;
    let labels = probabilities.iter().map(|p| argmax(p)).collect();
    Ok(Predictions { probabilities, labels })
}

/// Normalises records with the dataset normaliser and predicts. The
/// normaliser must carry the schema hash the model was trained with.
pub fn predict(
    params: &ModelParams,
    schema_hash: &str,
    normalizer: &Normalizer,
    records: &[&BuildingRecord],
    mask: &MaskSpec,
) -> Result<Predictions, ModelError> {
    if normalizer.schema_hash != schema_hash {
        return Err(ModelError::SchemaMismatch {
            expected: schema_hash.to_string(),
            found: normalizer.schema_hash.clone(),
        });
    }
    let samples = records
        .iter()
        .map(|r| normalizer.apply(r))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ModelError::Config(e.to_string()))?;
    predict_samples(params, &samples, mask)
}
