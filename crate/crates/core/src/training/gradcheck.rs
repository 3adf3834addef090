use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::FocalLossParams;
use super::train::{batch_loss, grad};
use super::TrainError;
use crate::dataset::Sample;
use crate::model::ModelParams;

/// Models with at most this many parameters get a full sweep by default.
pub const FULL_SWEEP_LIMIT: usize = 50_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Fraction of coordinates to check; `None` picks a full sweep for
    /// small models and 1% otherwise.
    pub fraction: Option<f64>,
    pub seed: u64,
    /// Restrict the check to tensors whose names start with one of these.
    pub only: Option<Vec<String>>,
    /// Denominator floor for the relative error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-4,
            fraction: None,
            seed: 0,
            only: None,
            floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares the analytic gradient of the mean batch loss with central
/// differences `(L(p + e) - L(p - e)) / 2e` coordinate by coordinate.
pub fn finite_diff_check(
    params: &ModelParams,
    batch: &[Sample],
    flp: &FocalLossParams,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, TrainError> {
    let (_, analytic) = grad(params, batch, flp)?;
    let coords: Vec<(usize, usize)> = params
        .specs
        .iter()
        .enumerate()
        .filter(|(_, s)| cfg.only.as_ref().is_none_or(|o| o.iter().any(|p| s.name.starts_with(p.as_str()))))
        .flat_map(|(t, s)| (0..s.rows * s.cols).map(move |i| (t, i)))
        .collect();
    let fraction = cfg
        .fraction
        .unwrap_or(if params.count() <= FULL_SWEEP_LIMIT { 1.0 } else { 0.01 });
    let coords: Vec<(usize, usize)> = if fraction >= 1.0 {
        coords
    } else {
        let n = ((coords.len() as f64 * fraction).ceil() as usize).clamp(1, coords.len());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut picked = sample(&mut rng, coords.len(), n).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| coords[i]).collect()
    };
    let results: Vec<(usize, usize, f64)> = coords
        .par_iter()
        .map(|&(t, i)| {
            let mut p = params.clone();
            let x = p.tensors[t].data[i];
            p.tensors[t].data[i] = x + cfg.epsilon;
            let up = batch_loss(&p, batch, flp)?;
            p.tensors[t].data[i] = x - cfg.epsilon;
            let down = batch_loss(&p, batch, flp)?;
            Ok((t, i, (up - down) / (2.0 * cfg.epsilon)))
        })
        .collect::<Result<_, TrainError>>()?;
    let mut report = GradCheckReport {
        checked: results.len(),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for (t, i, numeric) in results {
        let a = analytic[t].data[i];
        report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
        let rel = relative_error(a, numeric, cfg.floor);
        if rel > report.max_rel_error || report.worst_tensor.is_empty() {
            report.max_rel_error = rel;
            report.worst_tensor = params.specs[t].name.clone();
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
