use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{focal_loss_grad, FocalLossParams};
use super::optim::{cosine_lr, AdamW};
use super::TrainError;
use crate::autodiff::{Mat, Tape};
use crate::dataset::{class_weights, Sample};
use crate::metrics::compute_metrics;
use crate::model::{argmax, build_graph, init_model, predict_samples, MaskSpec, ModelConfig, ModelError, ModelParams, Perturbation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub gamma: f64,
    /// Inverse-frequency class weights; unit weights when false.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 20,
            base_lr: 5e-5,
            weight_decay: 0.05,
            warmup_epochs: 0,
            epochs: 150,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            gamma: 4.0,
            class_weighting: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("betas must lie in [0, 1) and eps must be positive");
        }
        if self.warmup_epochs > self.epochs {
            return bad("warmup_epochs exceeds epochs");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy on the training passes of this epoch (with mask-dropout).
    pub train_acc: f64,
    pub test_acc: f64,
    pub test_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub optimizer: AdamW,
    pub epoch: usize,
    pub step: usize,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Parameters after the epoch with the best held-out macro AUC.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub class_weights: Vec<f64>,
}

/// Per-sample forward and backward pass. Returns loss, parameter gradients
/// and logits.
fn sample_grad(
    params: &ModelParams,
    s: &Sample,
    noise: &Perturbation,
    flp: &FocalLossParams,
) -> Result<(f64, Vec<Mat>, Vec<f64>), TrainError> {
    let mut t = Tape::new(&params.tensors);
    let meta = params
        .config
        .embedding_variant
        .uses_metadata()
        .then_some((&s.metadata.values[..], &s.metadata.mask[..]));
    let out = build_graph(&mut t, params, &s.image, meta, noise)?;
    let logits = t.value(out).data.clone();
    let (loss, dz) = focal_loss_grad(&logits, s.label, flp)?;
    t.backward(out, Mat::row(dz));
    let mut grads = params.zeros_like();
    t.accumulate_param_grads(&mut grads);
    Ok((loss, grads, logits))
}

struct BatchResult {
    loss: f64,
    grads: Vec<Mat>,
    correct: usize,
}

/// Mean loss and gradient; samples run in parallel and are reduced in
/// batch order.
fn batch_grad(
    params: &ModelParams,
    batch: &[&Sample],
    noise: &[Perturbation],
    flp: &FocalLossParams,
) -> Result<BatchResult, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Config("empty batch".into()));
    }
    let per: Vec<_> = batch
        .par_iter()
        .zip(noise.par_iter())
        .map(|(s, n)| sample_grad(params, s, n, flp))
        .collect::<Result<_, _>>()?;
    let n = batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let mut correct = 0;
    for ((l, g, logits), s) in per.into_iter().zip(batch) {
        loss += l;
        correct += usize::from(argmax(&logits) == s.label);
        for (acc, gi) in grads.iter_mut().zip(&g) {
            for (a, b) in acc.data.iter_mut().zip(&gi.data) {
                *a += b;
            }
        }
    }
    for g in &mut grads {
        for v in &mut g.data {
            *v /= n;
        }
    }
    for (spec, g) in params.specs.iter().zip(&grads) {
        if g.data.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Numeric(format!("non-finite gradient in {}", spec.name)));
        }
    }
    Ok(BatchResult {
        loss: loss / n,
        grads,
        correct,
    })
}

/// Exact gradient of the mean focal loss over `batch` with respect to every
/// tensor, using each sample's own mask and no training noise.
pub fn grad(params: &ModelParams, batch: &[Sample], flp: &FocalLossParams) -> Result<(f64, Vec<Mat>), TrainError> {
    let refs: Vec<&Sample> = batch.iter().collect();
    let noise = vec![Perturbation::default(); batch.len()];
    let r = batch_grad(params, &refs, &noise, flp)?;
    Ok((r.loss, r.grads))
}

/// Mean focal loss without gradients.
pub fn batch_loss(params: &ModelParams, batch: &[Sample], flp: &FocalLossParams) -> Result<f64, TrainError> {
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|s| {
            let mut t = Tape::new(&params.tensors);
            let meta = params
                .config
                .embedding_variant
                .uses_metadata()
                .then_some((&s.metadata.values[..], &s.metadata.mask[..]));
            let out = build_graph(&mut t, params, &s.image, meta, &Perturbation::default())?;
            super::loss::focal_loss(&t.value(out).data, s.label, flp)
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

fn draw_noise(rng: &mut ChaCha8Rng, cfg: &ModelConfig, d: usize) -> Perturbation {
    let feature_drop = (cfg.embedding_variant.uses_metadata() && cfg.mask_dropout_rate > 0.0)
        .then(|| (0..d).map(|_| rng.gen_bool(cfg.mask_dropout_rate)).collect());
    let dropout = (cfg.dropout > 0.0).then(|| {
        let keep = 1.0 / (1.0 - cfg.dropout);
        (0..cfg.stage_channels[4])
            .map(|_| if rng.gen_bool(cfg.dropout) { 0.0 } else { keep })
            .collect()
    });
    Perturbation { feature_drop, dropout }
}

fn evaluate(params: &ModelParams, eval: &[Sample]) -> Result<(f64, Option<f64>), TrainError> {
    let d = eval[0].metadata.len();
    let pred = predict_samples(params, eval, &MaskSpec::none(d))?;
    let truth: Vec<usize> = eval.iter().map(|s| s.label).collect();
    let m = compute_metrics(&truth, &pred.probabilities)?;
    Ok((m.accuracy, m.macro_auc))
}

/// Trains from `init_model(model_cfg, cfg.seed)`. After every epoch the
/// model is evaluated on `eval` (the training samples when `eval` is
/// empty) and the parameters with the best macro AUC are kept.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    samples: &[Sample],
    eval: &[Sample],
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let k = model_cfg.n_classes;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    if labels.iter().any(|&l| l >= k) {
        return Err(TrainError::Config(format!("label outside 0..{k}")));
    }
    let weights = if cfg.class_weighting {
        class_weights(&labels, k)?
    } else {
        if samples.is_empty() {
            return Err(TrainError::Config("no training samples".into()));
        }
        vec![1.0; k]
    };
    let flp = FocalLossParams::new(cfg.gamma, weights.clone())?;
    let params = init_model(model_cfg, cfg.seed)?;
    let d = samples[0].metadata.len();
    let optimizer = AdamW::new(&params.tensors, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    let mut state = TrainState {
        params,
        optimizer,
        epoch: 0,
        step: 0,
        curve: Vec::new(),
    };
    let mut best = state.params.clone();
    let mut best_epoch = 0;
    let mut best_key = f64::NEG_INFINITY;
    let eval = if eval.is_empty() { samples } else { eval };

    let per_epoch = samples.len().div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let warmup = per_epoch * cfg.warmup_epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let noise: Vec<Perturbation> = batch.iter().map(|_| draw_noise(&mut rng, model_cfg, d)).collect();
            let r = match batch_grad(&state.params, &batch, &noise, &flp) {
                Ok(r) if r.loss.is_finite() => r,
                Ok(r) => return Err(diverged(state, epoch, format!("loss {}", r.loss))),
                Err(TrainError::Numeric(m)) | Err(TrainError::Model(ModelError::NonFinite(m))) => {
                    return Err(diverged(state, epoch, m))
                }
                Err(e) => return Err(e),
            };
            state.step += 1;
            let lr = cosine_lr(cfg.base_lr, state.step, total, warmup);
            state.optimizer.step(&mut state.params.tensors, &r.grads, lr);
            loss_sum += r.loss * batch.len() as f64;
            correct += r.correct;
        }
        state.epoch = epoch;
        let (test_acc, test_auc) = match evaluate(&state.params, eval) {
            Ok(v) => v,
            Err(TrainError::Model(ModelError::NonFinite(m))) => return Err(diverged(state, epoch, m)),
            Err(e) => return Err(e),
        };
        let point = CurvePoint {
            epoch,
            train_loss: loss_sum / samples.len() as f64,
            train_acc: correct as f64 / samples.len() as f64,
            test_acc,
            test_auc,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} train acc {:.4} test acc {:.4} auc {}",
            point.train_loss,
            point.train_acc,
            point.test_acc,
            point.test_auc.map_or("n/a".into(), |a| format!("{a:.4}"))
        );
        let key = test_auc.unwrap_or(f64::NEG_INFINITY);
        if key > best_key || best_epoch == 0 {
            best_key = key;
            best_epoch = epoch;
            best = state.params.clone();
        }
        state.curve.push(point);
    }
    Ok(TrainOutcome {
        state,
        best,
        best_epoch,
        class_weights: weights,
    })
}

fn diverged(state: TrainState, epoch: usize, reason: String) -> TrainError {
    TrainError::Diverged {
        epoch,
        step: state.step,
        reason,
        state: Box::new(state),
    }
}

/// `epoch,train_loss,test_acc,test_auc,train_acc`; an undefined AUC is empty.
pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<(), TrainError> {
    let mut s = String::from("epoch,train_loss,test_acc,test_auc,train_acc\n");
    for p in curve {
        let auc = p.test_auc.map_or(String::new(), |a| a.to_string());
        s.push_str(&format!("{},{},{},{},{}\n", p.epoch, p.train_loss, p.test_acc, auc, p.train_acc));
    }
    fs::write(path, s)?;
    Ok(())
}
