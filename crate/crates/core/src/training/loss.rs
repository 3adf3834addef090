use serde::{Deserialize, Serialize};

use super::TrainError;

/// Log-probabilities below this are clamped.
pub const LOGP_FLOOR: f64 = -30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalLossParams {
    pub gamma: f64,
    pub class_weights: Vec<f64>,
}

impl FocalLossParams {
    pub fn new(gamma: f64, class_weights: Vec<f64>) -> Result<Self, TrainError> {
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(TrainError::Config(format!("gamma must be finite and >= 0, got {gamma}")));
        }
        if class_weights.is_empty() || class_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(TrainError::Config("class weights must be positive".into()));
        }
        Ok(FocalLossParams { gamma, class_weights })
    }

    /// Unit weights.
    pub fn uniform(gamma: f64, k: usize) -> Self {
        FocalLossParams {
            gamma,
            class_weights: vec![1.0; k],
        }
    }
}

fn log_softmax_at(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
    let lse = m + z.ln();
    let probs = logits.iter().map(|v| (v - lse).exp()).collect();
    (logits[label] - lse, probs)
}

fn check(logits: &[f64], label: usize, flp: &FocalLossParams) -> Result<(), TrainError> {
    if logits.len() != flp.class_weights.len() {
        return Err(TrainError::Config(format!(
            "{} logits for {} class weights",
            logits.len(),
            flp.class_weights.len()
        )));
    }
    if label >= logits.len() {
        return Err(TrainError::Config(format!("label {label} out of range")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::Numeric("non-finite logits".into()));
    }
    Ok(())
}

/// `w_t (1 - p_t)^gamma (-log p_t)` with `log p_t` from log-sum-exp.
pub fn focal_loss(logits: &[f64], label: usize, flp: &FocalLossParams) -> Result<f64, TrainError> {
    Ok(focal_loss_grad(logits, label, flp)?.0)
}

/// Loss and its gradient with respect to the logits.
pub fn focal_loss_grad(logits: &[f64], label: usize, flp: &FocalLossParams) -> Result<(f64, Vec<f64>), TrainError> {
    check(logits, label, flp)?;
    let (raw, probs) = log_softmax_at(logits, label);
    let w = flp.class_weights[label];
    let g = flp.gamma;
    let l = raw.max(LOGP_FLOOR);
    let p = l.exp();
    let q = -(l.exp_m1()); // 1 - p without cancellation
    let loss = w * q.powf(g) * (0.0 - l);
    if raw < LOGP_FLOOR {
        return Ok((loss, vec![0.0; logits.len()]));
    }
    // dL/dl, with l = log p_t. The first term vanishes at p_t = 1 for every gamma.
    let focus = if g == 0.0 || q == 0.0 {
        0.0
    } else {
        g * p * q.powf(g - 1.0) * -l
    };
    let dl = -w * (focus + q.powf(g));
    let grad = probs
        .iter()
        .enumerate()
        .map(|(j, pj)| dl * (f64::from(u8::from(j == label)) - pj))
        .collect();
    Ok((loss, grad))
}

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    -log_softmax_at(logits, label).0
}

/// Mean focal loss over rows.
pub fn batch_focal_loss(logits: &[Vec<f64>], labels: &[usize], flp: &FocalLossParams) -> Result<f64, TrainError> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(TrainError::Config("batch must be non-empty with one label per row".into()));
    }
    let mut s = 0.0;
    for (l, &y) in logits.iter().zip(labels) {
        s += focal_loss(l, y, flp)?;
    }
    Ok(s / logits.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_differences() {
        let flp = FocalLossParams::new(2.5, vec![1.0, 3.0, 0.5]).unwrap();
        for (logits, y) in [(vec![0.3, -1.2, 2.0], 1), (vec![4.0, 0.0, -4.0], 0), (vec![0.1, 0.2, 0.3], 2)] {
            let (_, g) = focal_loss_grad(&logits, y, &flp).unwrap();
            for j in 0..3 {
                let h = 1e-6;
                let mut a = logits.clone();
                a[j] += h;
                let mut b = logits.clone();
                b[j] -= h;
                let fd = (focal_loss(&a, y, &flp).unwrap() - focal_loss(&b, y, &flp).unwrap()) / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-8, "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn saturated_logits_stay_finite() {
        for gamma in [0.0, 0.5, 1.0, 4.0] {
            let flp = FocalLossParams::uniform(gamma, 2);
            let (l, g) = focal_loss_grad(&[800.0, -800.0], 0, &flp).unwrap();
            assert_eq!(l, 0.0);
            assert!(g.iter().all(|v| v.is_finite()));
            let (l, g) = focal_loss_grad(&[-800.0, 800.0], 0, &flp).unwrap();
            assert!((l - 30.0).abs() < 1e-9 && g.iter().all(|v| *v == 0.0));
        }
        assert!(focal_loss(&[f64::NAN, 0.0], 0, &FocalLossParams::uniform(4.0, 2)).is_err());
    }
}
