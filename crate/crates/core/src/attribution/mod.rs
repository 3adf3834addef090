//! Shapley attribution over metadata features plus the image as a single
//! group. Absent groups take background values and the value function is
//! the background mean of the target-class probability.

mod summary;

pub use summary::{summarize_classwise, write_shap_values_csv, write_summaries, ClassSummary, FeatureRank, SummaryPoint};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::softmax;
use crate::dataset::MetadataVector;
use crate::model::{forward, MaskSpec, ModelError, ModelParams};

/// Largest group count accepted by [`shapley_exact`].
pub const MAX_EXACT_GROUPS: usize = 15;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("{0} groups is too many for exact enumeration (max {MAX_EXACT_GROUPS}); use shapley_sampled")]
    TooManyGroups(usize),
    #[error("background set is empty")]
    EmptyBackground,
    #[error("sample_count must be at least 10, got {0}")]
    TooFewSamples(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Model input: a normalised image and metadata with its mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub image: Vec<f64>,
    pub metadata: MetadataVector,
}

/// Anything that maps an [`Instance`] to class probabilities.
pub trait ProbabilityModel: Sync {
    fn probabilities(&self, x: &Instance) -> Result<Vec<f64>, ModelError>;
}

/// A trained network evaluated under an inference mask.
pub struct NetworkModel<'a> {
    pub params: &'a ModelParams,
    pub mask: MaskSpec,
}

impl ProbabilityModel for NetworkModel<'_> {
    fn probabilities(&self, x: &Instance) -> Result<Vec<f64>, ModelError> {
        forward(self.params, &x.image, &x.metadata, &self.mask).map(|l| softmax(&l))
    }
}

/// Feature groups: one per metadata feature, then optionally the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGroups {
    pub names: Vec<String>,
    pub imagery: bool,
}

impl FeatureGroups {
    pub fn new(metadata_names: Vec<String>, imagery: bool) -> Self {
        FeatureGroups {
            names: metadata_names,
            imagery,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len() + usize::from(self.imagery)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn name(&self, g: usize) -> &str {
        self.names.get(g).map_or("imagery", String::as_str)
    }

    /// Record values for groups in `present`, background values elsewhere.
    pub fn compose(&self, x: &Instance, b: &Instance, present: &[bool]) -> Instance {
        let d = self.names.len();
        let mut values = b.metadata.values.clone();
        let mut mask = b.metadata.mask.clone();
        for j in 0..d {
            if present[j] {
                values[j] = x.metadata.values[j];
                mask[j] = x.metadata.mask[j];
            }
        }
        let image = if self.imagery && present[d] { &x.image } else { &b.image };
        Instance {
            image: image.clone(),
            metadata: MetadataVector { values, mask },
        }
    }

    fn check(&self, x: &Instance, background: &[Instance]) -> Result<(), AttributionError> {
        if background.is_empty() {
            return Err(AttributionError::EmptyBackground);
        }
        for i in std::iter::once(x).chain(background) {
            if i.metadata.values.len() != self.names.len() || i.metadata.mask.len() != self.names.len() {
                return Err(AttributionError::Shape(format!(
                    "instance has {} metadata values for {} groups",
                    i.metadata.values.len(),
                    self.names.len()
                )));
            }
        }
        Ok(())
    }
}

/// Attributions for one record, all classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    /// `values[g][c]`
    pub values: Vec<Vec<f64>>,
    /// Monte-Carlo standard errors, zero in exact mode.
    pub stderr: Vec<Vec<f64>>,
    /// `f(x)` per class.
    pub prediction: Vec<f64>,
    /// Background mean of `f` per class.
    pub baseline: Vec<f64>,
}

impl Attribution {
    /// Per class `|sum_g values - (f(x) - baseline)|`.
    pub fn efficiency_residual(&self) -> Vec<f64> {
        (0..self.prediction.len())
            .map(|c| {
                let s: f64 = self.values.iter().map(|v| v[c]).sum();
                (s - (self.prediction[c] - self.baseline[c])).abs()
            })
            .collect()
    }
}

fn mean_over_background<M: ProbabilityModel>(
    model: &M,
    groups: &FeatureGroups,
    x: &Instance,
    background: &[Instance],
    present: &[bool],
) -> Result<Vec<f64>, ModelError> {
    let mut acc: Option<Vec<f64>> = None;
    for b in background {
        let p = model.probabilities(&groups.compose(x, b, present))?;
        match &mut acc {
            None => acc = Some(p),
            Some(a) => a.iter_mut().zip(&p).for_each(|(s, v)| *s += v),
        }
    }
    let n = background.len() as f64;
    Ok(acc.expect("non-empty background").into_iter().map(|s| s / n).collect())
}

/// Exact Shapley values by enumerating all `2^n` coalitions.
pub fn shapley_exact<M: ProbabilityModel>(
    model: &M,
    x: &Instance,
    background: &[Instance],
    groups: &FeatureGroups,
) -> Result<Attribution, AttributionError> {
    let n = groups.len();
    if n > MAX_EXACT_GROUPS {
        return Err(AttributionError::TooManyGroups(n));
    }
    groups.check(x, background)?;
    let v: Vec<Vec<f64>> = (0..1usize << n)
        .into_par_iter()
        .map(|s| {
            let present: Vec<bool> = (0..n).map(|g| s >> g & 1 == 1).collect();
            mean_over_background(model, groups, x, background, &present)
        })
        .collect::<Result<_, _>>()?;
    let k = v[0].len();
    // weight(s) = s! (n - s - 1)! / n!
    let mut weight = vec![0.0; n];
    for (s, w) in weight.iter_mut().enumerate() {
        *w = (1..=s).map(|i| i as f64).product::<f64>() * (1..n - s).map(|i| i as f64).product::<f64>()
            / (1..=n).map(|i| i as f64).product::<f64>();
    }
    let mut values = vec![vec![0.0; k]; n];
    for (g, row) in values.iter_mut().enumerate() {
        for s in 0..1usize << n {
            if s >> g & 1 == 1 {
                continue;
            }
            let w = weight[s.count_ones() as usize];
            for c in 0..k {
                row[c] += w * (v[s | 1 << g][c] - v[s][c]);
            }
        }
    }
    let full = (1usize << n) - 1;
    Ok(Attribution {
        stderr: vec![vec![0.0; k]; n],
        prediction: v[full].clone(),
        baseline: v[0].clone(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// Number of permutations (drawn in antithetic pairs).
    pub sample_count: usize,
    pub seed: u64,
    /// Average every coalition over the whole background set. When false,
    /// each permutation pair uses one random background record: cheaper,
    /// still unbiased, noisier.
    pub full_background: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            sample_count: 1000,
            seed: 0,
            full_background: true,
        }
    }
}

/// Marginal contributions along `order` with absent groups averaged over
/// `bg`; `out[g][c]` is filled.
fn walk<M: ProbabilityModel>(
    model: &M,
    groups: &FeatureGroups,
    x: &Instance,
    bg: &[Instance],
    order: &[usize],
    out: &mut [Vec<f64>],
) -> Result<(), ModelError> {
    let mut present = vec![false; groups.len()];
    let mut prev = mean_over_background(model, groups, x, bg, &present)?;
    for &g in order {
        present[g] = true;
        let cur = mean_over_background(model, groups, x, bg, &present)?;
        for (o, (a, p)) in out[g].iter_mut().zip(cur.iter().zip(&prev)) {
            *o = a - p;
        }
        prev = cur;
    }
    Ok(())
}

/// Permutation-sampling estimator. Samples come in antithetic pairs (a
/// permutation and its reverse); standard errors are taken over pair
/// means. Deterministic for a given seed regardless of thread count.
pub fn shapley_sampled<M: ProbabilityModel>(
    model: &M,
    x: &Instance,
    background: &[Instance],
    groups: &FeatureGroups,
    cfg: &SamplingConfig,
) -> Result<Attribution, AttributionError> {
    if cfg.sample_count < 10 {
        return Err(AttributionError::TooFewSamples(cfg.sample_count));
    }
    groups.check(x, background)?;
    let n = groups.len();
    let pairs = cfg.sample_count.div_ceil(2);
    let per_pair: Vec<Vec<Vec<f64>>> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let bg = if cfg.full_background {
                background
            } else {
                std::slice::from_ref(&background[rng.gen_range(0..background.len())])
            };
            let k = model.probabilities(x)?.len();
            let mut fwd = vec![vec![0.0; k]; n];
            let mut rev = vec![vec![0.0; k]; n];
            walk(model, groups, x, bg, &order, &mut fwd)?;
            order.reverse();
            walk(model, groups, x, bg, &order, &mut rev)?;
            for (f, r) in fwd.iter_mut().zip(&rev) {
                f.iter_mut().zip(r).for_each(|(a, b)| *a = (*a + b) / 2.0);
            }
            Ok(fwd)
        })
        .collect::<Result<_, ModelError>>()?;
    let k = per_pair[0][0].len();
    let m = pairs as f64;
    let mut values = vec![vec![0.0; k]; n];
    let mut stderr = vec![vec![0.0; k]; n];
    for g in 0..n {
        for c in 0..k {
            let mean = per_pair.iter().map(|p| p[g][c]).sum::<f64>() / m;
            let var = if pairs > 1 {
                per_pair.iter().map(|p| (p[g][c] - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            values[g][c] = mean;
            stderr[g][c] = (var / m).sqrt();
        }
    }
    let prediction = model.probabilities(x)?;
    let all_absent = vec![false; n];
    let baseline = mean_over_background(model, groups, x, background, &all_absent)?;
    Ok(Attribution {
        values,
        stderr,
        prediction,
        baseline,
    })
}

/// `k` distinct indices out of `n`, sorted, seed-fixed (all of them when
/// `k >= n`).
pub fn sample_background(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, k.min(n)).into_vec();
    idx.sort_unstable();
    idx
}
