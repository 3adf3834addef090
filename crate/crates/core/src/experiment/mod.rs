//! Experiment orchestration: training runs with pinned manifests, masked
//! evaluation, the cross-region grid, attribution runs and report tables.
//!
//! A run directory looks like
//!
//! ```text
//! <out>/<name>/manifest.json     resolved config, dataset hash, outcome
//! <out>/<name>/checkpoint.ckpt   best-epoch parameters
//! <out>/<name>/curve.csv         per-epoch loss / accuracy / AUC
//! <out>/<name>/metrics.json      evaluation under the configured mask
//! <out>/<name>/roc_<class>.csv, diff_hist.csv, predictions.csv, eval_map.geojson
//! ```

mod config;
mod explain;
mod report;
mod run;

pub use config::{load_config, ExperimentConfig, MaskChoice, RegionGrid, RunManifest, TrainScope};
pub use explain::{explain, ExplainOptions, ExplainOutcome, RecordSelection};
pub use report::{improvement, report, write_table, Comparison, DeltaRow, Improvement, Report, RunRow, METRIC_NAMES};
pub use run::{
    build_and_save, evaluate_checkpoint, run_experiment, BuildConfig, EvalSplit, EvaluationInfo, Evaluator,
    RegionResult, RunOutcome, SchemaChoice, CHECKPOINT_FILE, MANIFEST_FILE,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::attribution::AttributionError;
use crate::dataset::DatasetError;
use crate::fields::FieldError;
use crate::geo::GeoError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("no dataset at {0}")]
    MissingDataset(PathBuf),
    #[error("dataset hash changed: manifest pins {expected}, found {found}")]
    DatasetChanged { expected: String, found: String },
    #[error("schema hash mismatch: checkpoint expects {expected}, dataset has {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("run directory {0} already holds a different experiment")]
    RunExists(PathBuf),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl ExperimentError {
    /// Stable short code for machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentError::Config(_) => "config",
            ExperimentError::MissingDataset(_) => "missing_dataset",
            ExperimentError::DatasetChanged { .. } => "dataset_changed",
            ExperimentError::SchemaMismatch { .. }
            | ExperimentError::Model(ModelError::SchemaMismatch { .. })
            | ExperimentError::Dataset(DatasetError::SchemaMismatch { .. }) => "schema_mismatch",
            ExperimentError::RunExists(_) => "run_exists",
            ExperimentError::Train(TrainError::Diverged { .. }) => "diverged",
            ExperimentError::Train(TrainError::Config(_)) | ExperimentError::Model(ModelError::Config(_)) => "config",
            ExperimentError::Dataset(_) => "dataset",
            ExperimentError::Model(_) => "model",
            ExperimentError::Train(_) => "training",
            ExperimentError::Metrics(_) => "metrics",
            ExperimentError::Attribution(_) => "attribution",
            ExperimentError::Geo(_) => "geo",
            ExperimentError::Field(_) => "fields",
            ExperimentError::Io(_) => "io",
            ExperimentError::Json(_) => "json",
        }
    }
}
