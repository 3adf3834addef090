//! Focal loss, AdamW with cosine annealing, the training loop and the
//! finite-difference gradient check.

mod gradcheck;
mod loss;
mod optim;
mod train;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckConfig, GradCheckReport, FULL_SWEEP_LIMIT};
pub use loss::{batch_focal_loss, cross_entropy, focal_loss, focal_loss_grad, FocalLossParams, LOGP_FLOOR};
pub use optim::{cosine_lr, sgd_step, AdamW};
pub use train::{batch_loss, grad, train, write_curve_csv, CurvePoint, TrainConfig, TrainOutcome, TrainState};

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::metrics::MetricsError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged {
        epoch: usize,
        step: usize,
        reason: String,
        /// Last state before the failing step.
        state: Box<TrainState>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
