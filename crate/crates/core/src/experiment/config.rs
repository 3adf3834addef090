use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::dataset::{MetadataSchema, SAR_FEATURES};
use crate::model::{MaskSpec, ModelConfig};
use crate::training::TrainConfig;

/// Metadata features hidden at inference: `"NONE"`, `"ALL"`, `"SAR"` or an
/// explicit list of feature names.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "MaskRepr", into = "MaskRepr")]
pub enum MaskChoice {
    #[default]
    None,
    All,
    Sar,
    Features(Vec<String>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MaskRepr {
    Named(String),
    List(Vec<String>),
}

impl TryFrom<MaskRepr> for MaskChoice {
    type Error = String;

    fn try_from(r: MaskRepr) -> Result<Self, String> {
        match r {
            MaskRepr::Named(s) => MaskChoice::parse(&s),
            MaskRepr::List(v) => Ok(MaskChoice::Features(v)),
        }
    }
}

impl From<MaskChoice> for MaskRepr {
    fn from(m: MaskChoice) -> Self {
        match m {
            MaskChoice::None => MaskRepr::Named("NONE".into()),
            MaskChoice::All => MaskRepr::Named("ALL".into()),
            MaskChoice::Sar => MaskRepr::Named("SAR".into()),
            MaskChoice::Features(v) => MaskRepr::List(v),
        }
    }
}

impl MaskChoice {
    /// `NONE`, `ALL`, `SAR` (any case) or a comma-separated feature list.
    pub fn parse(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "" | "NONE" => Ok(MaskChoice::None),
            "ALL" => Ok(MaskChoice::All),
            "SAR" => Ok(MaskChoice::Sar),
            _ => Ok(MaskChoice::Features(
                s.split(',').map(|f| f.trim().to_string()).filter(|f| !f.is_empty()).collect(),
            )),
        }
    }

    pub fn resolve(&self, schema: &MetadataSchema) -> Result<MaskSpec, ExperimentError> {
        let d = schema.len();
        let named = |names: &[&str]| {
            MaskSpec::from_names(schema, names).map_err(|e| ExperimentError::Config(format!("mask {}: {e}", self.label())))
        };
        Ok(match self {
            MaskChoice::None => MaskSpec::none(d),
            MaskChoice::All => MaskSpec::all(d),
            MaskChoice::Sar => named(&SAR_FEATURES)?,
            MaskChoice::Features(v) => named(&v.iter().map(String::as_str).collect::<Vec<_>>())?,
        })
    }

    /// Short label for file and table names.
    pub fn label(&self) -> String {
        match self {
            MaskChoice::None => "NONE".into(),
            MaskChoice::All => "ALL".into(),
            MaskChoice::Sar => "SAR".into(),
            MaskChoice::Features(v) => v.join("+"),
        }
    }
}

impl fmt::Display for MaskChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Which records train the model in a region grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainScope {
    /// Train split of the training regions only.
    #[default]
    Regions,
    /// Whole train split; every test region is scored on its test split.
    Full,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionGrid {
    /// Named region polygons (GeoJSON). Without it, each record's own
    /// region label decides membership.
    pub polygons: Option<PathBuf>,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub scope: TrainScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mask: MaskChoice,
    pub regions: Option<RegionGrid>,
    /// Copied into `train.seed`; also seeds initialisation.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "run".into(),
            dataset: PathBuf::new(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            mask: MaskChoice::None,
            regions: None,
            seed: 0,
        }
    }
}

/// Reads an experiment config or a run manifest. For a manifest the pinned
/// dataset hash comes back too.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, Option<String>), ExperimentError> {
    let text = std::fs::read_to_string(path)?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    if v.get("config").is_some() && v.get("dataset_hash").is_some() {
        let m: RunManifest = serde_json::from_value(v)?;
        return Ok((m.config, Some(m.dataset_hash)));
    }
    Ok((serde_json::from_value(v)?, None))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(ExperimentError::Config(format!("invalid run name {:?}", self.name)));
        }
        if self.dataset.as_os_str().is_empty() {
            return Err(ExperimentError::Config("no dataset directory given".into()));
        }
        self.train.validate()?;
        Ok(())
    }
}

/// Everything needed to rerun an experiment, plus what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    /// Fully resolved configuration.
    pub config: ExperimentConfig,
    pub dataset_hash: String,
    pub schema_hash: String,
    pub mask_features: Vec<String>,
    pub class_weights: Vec<f64>,
    pub n_train: usize,
    pub n_eval: usize,
    pub best_epoch: usize,
    pub checkpoint_sha256: String,
}
