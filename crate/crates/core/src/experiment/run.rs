use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, ExperimentError, MaskChoice, RegionGrid, RunManifest, TrainScope};
use crate::dataset::{
    build_dataset, dataset_hash, io::load_scenes, split_by_region, BuildOptions, BuildReport, BuildingRecord, Dataset,
    LabelScheme, MetadataSchema, Normalizer,
};
use crate::fields::io::load_catalog;
use crate::geo::io::{read_footprints, read_ground_truth, read_named_polygons};
use crate::geo::FootprintId;
use crate::metrics::{
    compute_metrics, difference_histogram, export_evaluation_map, roc_curve, write_diff_hist_csv,
    write_metrics_json, write_roc_csv, EvalRow, MetricsError, MetricsReport,
};
use crate::model::{file_hash, predict, Checkpoint, MaskSpec};
use crate::training::{train, write_curve_csv, TrainError, TrainOutcome};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
const NORMALIZER_FILE: &str = "normalizer.json";
const MANIFEST_VERSION: u32 = 1;

/// Named built-in schema or an inline feature list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaChoice {
    Named(String),
    Custom(MetadataSchema),
}

impl Default for SchemaChoice {
    fn default() -> Self {
        SchemaChoice::Named("turkiye_l".into())
    }
}

impl SchemaChoice {
    pub fn resolve(&self) -> Result<MetadataSchema, ExperimentError> {
        match self {
            SchemaChoice::Custom(s) => Ok(s.clone()),
            SchemaChoice::Named(n) => match n.to_ascii_lowercase().replace('-', "_").as_str() {
                "turkiye_l" => Ok(MetadataSchema::turkiye_l()),
                "turkiye_s" => Ok(MetadataSchema::turkiye_s()),
                _ => Err(ExperimentError::Config(format!("unknown schema {n:?} (turkiye_l, turkiye_s)"))),
            },
        }
    }
}

/// Inputs for building a dataset directory from raw sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub footprints: PathBuf,
    pub ground_truth: PathBuf,
    /// Directory of `*.asc`, `*.grid.json` and `*.contours.geojson` fields.
    pub fields: PathBuf,
    /// Directory of PNG scenes with JSON sidecars.
    pub scenes: PathBuf,
    pub schema: SchemaChoice,
    pub scheme: LabelScheme,
    pub options: BuildOptions,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            footprints: PathBuf::new(),
            ground_truth: PathBuf::new(),
            fields: PathBuf::new(),
            scenes: PathBuf::new(),
            schema: SchemaChoice::default(),
            scheme: LabelScheme::L4,
            options: BuildOptions::default(),
            train_fraction: 0.85,
            seed: 0,
        }
    }
}

/// Builds, splits and saves a dataset; the build report goes to
/// `build_report.json` beside it.
pub fn build_and_save(cfg: &BuildConfig, out: &Path) -> Result<(Dataset, BuildReport), ExperimentError> {
    let schema = cfg.schema.resolve()?;
    let footprints = read_footprints(&cfg.footprints)?;
    let gt = read_ground_truth(&cfg.ground_truth)?;
    let catalog = load_catalog(&cfg.fields, cfg.options.zone)?;
    let scenes = load_scenes(&cfg.scenes)?;
    let (records, report) = build_dataset(footprints, &gt, &catalog, &scenes, &schema, cfg.scheme, &cfg.options)?;
    let ds = Dataset::finalize(schema, cfg.scheme, cfg.options.clone(), records, cfg.train_fraction, cfg.seed)?;
    ds.save(out)?;
    write_json(&out.join("build_report.json"), &report)?;
    Ok((ds, report))
}

/// Provenance written beside every evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationInfo {
    pub checkpoint_sha256: String,
    pub dataset_hash: String,
    pub mask: MaskChoice,
    pub mask_features: Vec<String>,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionResult {
    pub region: String,
    /// Whether the region contributed training records.
    pub seen: bool,
    pub n: usize,
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    /// Evaluation of a plain run; `None` for a region grid.
    pub metrics: Option<MetricsReport>,
    pub regions: Vec<RegionResult>,
}

#[derive(Serialize, Deserialize)]
struct GridSummary {
    train_regions: Vec<String>,
    scope: TrainScope,
    regions: Vec<RegionResult>,
}

pub(super) fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), ExperimentError> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

pub(super) fn open_dataset(dir: &Path) -> Result<(Dataset, String), ExperimentError> {
    if !dir.join("manifest.json").is_file() {
        return Err(ExperimentError::MissingDataset(dir.to_path_buf()));
    }
    let hash = dataset_hash(dir)?;
    Ok((Dataset::load(dir)?, hash))
}

fn mask_names(spec: &MaskSpec, ds: &Dataset) -> Vec<String> {
    ds.schema
        .features
        .iter()
        .zip(&spec.bits)
        .filter(|(_, m)| **m)
        .map(|(f, _)| f.name.clone())
        .collect()
}

/// Schema hash and model dimensions of `ckpt` must fit `ds`.
pub(super) fn check_compat(ckpt: &Checkpoint, ds: &Dataset) -> Result<(), ExperimentError> {
    let found = ds.schema_hash();
    if ckpt.schema_hash != found {
        return Err(ExperimentError::SchemaMismatch {
            expected: ckpt.schema_hash.clone(),
            found,
        });
    }
    let c = &ckpt.params.config;
    if c.n_classes != ds.scheme.n_classes()
        || c.metadata_dim != ds.schema.len()
        || c.image_size != ds.build.tile_size
    {
        return Err(ExperimentError::Config(format!(
            "checkpoint expects {} classes, {} features, {} px tiles; dataset has {}, {}, {}",
            c.n_classes,
            c.metadata_dim,
            c.image_size,
            ds.scheme.n_classes(),
            ds.schema.len(),
            ds.build.tile_size
        )));
    }
    Ok(())
}

/// Loaded checkpoint, dataset and normaliser; evaluates record sets into
/// output directories.
pub struct Evaluator<'a> {
    pub checkpoint: &'a Checkpoint,
    pub checkpoint_sha256: String,
    pub dataset: &'a Dataset,
    pub dataset_hash: String,
    pub normalizer: &'a Normalizer,
}

impl Evaluator<'_> {
    fn check(&self) -> Result<(), ExperimentError> {
        check_compat(self.checkpoint, self.dataset)
    }

    /// Writes `metrics.json`, `roc_<class>.csv`, `diff_hist.csv`,
    /// `predictions.csv`, `eval_map.geojson` and `evaluation.json` to `out`.
    pub fn evaluate(
        &self,
        out: &Path,
        records: &[&BuildingRecord],
        mask: &MaskChoice,
    ) -> Result<MetricsReport, ExperimentError> {
        self.check()?;
        if records.is_empty() {
            return Err(ExperimentError::Config("no records to evaluate".into()));
        }
        let spec = mask.resolve(&self.dataset.schema)?;
        let scheme = self.dataset.scheme;
        let k = scheme.n_classes();
        let pred = predict(
            &self.checkpoint.params,
            &self.checkpoint.schema_hash,
            self.normalizer,
            records,
            &spec,
        )?;
        let truth: Vec<usize> = records.iter().map(|r| r.label.index()).collect();
        let report = compute_metrics(&truth, &pred.probabilities)?;

        fs::create_dir_all(out)?;
        write_metrics_json(&out.join("metrics.json"), &report)?;
        for c in 0..k {
            let positive: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            let scores: Vec<f64> = pred.probabilities.iter().map(|p| p[c]).collect();
            let value = scheme.from_index(c).value;
            match roc_curve(&positive, &scores) {
                Ok(curve) => write_roc_csv(&out.join(format!("roc_{value}.csv")), &curve)?,
                Err(MetricsError::SingleClass) => log::warn!("class {value}: ROC undefined, no file written"),
                Err(e) => return Err(e.into()),
            }
        }
        let value = |i: usize| i64::from(scheme.from_index(i).value);
        let tv: Vec<i64> = truth.iter().map(|&t| value(t)).collect();
        let pv: Vec<i64> = pred.labels.iter().map(|&p| value(p)).collect();
        write_diff_hist_csv(&out.join("diff_hist.csv"), &difference_histogram(&tv, &pv, k)?)?;

        let mut csv = String::from("id,true_class,pred_class");
        for c in 0..k {
            csv.push_str(&format!(",p_{}", value(c)));
        }
        csv.push('\n');
        let mut rows = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            csv.push_str(&format!("{},{},{}", r.id, tv[i], pv[i]));
            for p in &pred.probabilities[i] {
                csv.push_str(&format!(",{p}"));
            }
            csv.push('\n');
            rows.push(EvalRow {
                id: r.id.clone(),
                true_class: tv[i],
                pred_class: pv[i],
            });
        }
        fs::write(out.join("predictions.csv"), csv)?;
        let fps: Vec<_> = records.iter().map(|r| &r.footprint).collect();
        write_json(&out.join("eval_map.geojson"), &export_evaluation_map(&fps, &rows)?)?;
        write_json(
            &out.join("evaluation.json"),
            &EvaluationInfo {
                checkpoint_sha256: self.checkpoint_sha256.clone(),
                dataset_hash: self.dataset_hash.clone(),
                mask: mask.clone(),
                mask_features: mask_names(&spec, self.dataset),
                records: records.len(),
            },
        )?;
        Ok(report)
    }
}

/// Which records [`evaluate_checkpoint`] scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    #[default]
    Test,
    Train,
    All,
}

/// Evaluates a saved checkpoint under `mask`. A `normalizer.json` beside
/// the checkpoint (written by every run) takes precedence over the
/// dataset's own normaliser.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    dataset: &Path,
    mask: &MaskChoice,
    split: EvalSplit,
    out: &Path,
) -> Result<MetricsReport, ExperimentError> {
    let (ds, ds_hash) = open_dataset(dataset)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let normalizer = checkpoint_normalizer(checkpoint, &ds)?;
    let records = match split {
        EvalSplit::Test => ds.test_records(),
        EvalSplit::Train => ds.train_records(),
        EvalSplit::All => ds.records.iter().collect(),
    };
    Evaluator {
        checkpoint: &ckpt,
        checkpoint_sha256: file_hash(checkpoint)?,
        dataset: &ds,
        dataset_hash: ds_hash,
        normalizer: &normalizer,
    }
    .evaluate(out, &records, mask)
}

/// The `normalizer.json` beside a checkpoint, else the dataset's own.
pub(super) fn checkpoint_normalizer(checkpoint: &Path, ds: &Dataset) -> Result<Normalizer, ExperimentError> {
    let side = checkpoint.parent().unwrap_or(Path::new(".")).join(NORMALIZER_FILE);
    Ok(if side.is_file() {
        serde_json::from_str(&fs::read_to_string(&side)?)?
    } else {
        ds.normalizer()?.clone()
    })
}

fn resolve(cfg: &ExperimentConfig, ds: &Dataset) -> ExperimentConfig {
    let mut r = cfg.clone();
    let m = &mut r.model;
    let (k, d, size) = (ds.scheme.n_classes(), ds.schema.len(), ds.build.tile_size);
    if (m.n_classes, m.metadata_dim, m.image_size) != (k, d, size) {
        log::info!("model dims taken from the dataset: {k} classes, {d} features, {size} px");
    }
    m.n_classes = k;
    m.metadata_dim = d;
    m.image_size = size;
    r.train.seed = r.seed;
    r
}

fn prepare_dir(dir: &Path, resolved: &ExperimentConfig) -> Result<(), ExperimentError> {
    let existing = dir.join(MANIFEST_FILE);
    if existing.is_file() {
        let prev: RunManifest = serde_json::from_str(&fs::read_to_string(&existing)?)?;
        if prev.config != *resolved {
            return Err(ExperimentError::RunExists(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn fit(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    normalizer: &Normalizer,
    train_recs: &[&BuildingRecord],
    eval_recs: &[&BuildingRecord],
    dir: &Path,
) -> Result<TrainOutcome, ExperimentError> {
    let apply = |rs: &[&BuildingRecord]| rs.iter().map(|r| normalizer.apply(r)).collect::<Result<Vec<_>, _>>();
    let samples = apply(train_recs)?;
    let eval = apply(eval_recs)?;
    match train(&cfg.model, &cfg.train, &samples, &eval) {
        Ok(o) => Ok(o),
        Err(TrainError::Diverged {
            epoch,
            step,
            reason,
            state,
        }) => {
            let dump = dir.join("diverged.ckpt");
            Checkpoint {
                params: state.params.clone(),
                schema_hash: ds.schema_hash(),
                seed: cfg.seed,
                epoch: state.epoch,
            }
            .save(&dump)?;
            log::error!("diverged at epoch {epoch}, step {step}: {reason}; last good state in {}", dump.display());
            Err(TrainError::Diverged {
                epoch,
                step,
                reason,
                state,
            }
            .into())
        }
        Err(e) => Err(e.into()),
    }
}

/// Trains, saves the best checkpoint, reloads it and evaluates under the
/// configured mask; or, with `regions` set, runs the generalisation grid.
/// `pinned_hash` (from a manifest) must match the dataset on disk.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_root: &Path,
    pinned_hash: Option<&str>,
) -> Result<RunOutcome, ExperimentError> {
    cfg.validate()?;
    let (ds, ds_hash) = open_dataset(&cfg.dataset)?;
    if let Some(p) = pinned_hash {
        if p != ds_hash {
            return Err(ExperimentError::DatasetChanged {
                expected: p.to_string(),
                found: ds_hash,
            });
        }
    }
    let resolved = resolve(cfg, &ds);
    resolved.model.validate()?;
    let mask = resolved.mask.resolve(&ds.schema)?;
    let dir = out_root.join(&resolved.name);
    prepare_dir(&dir, &resolved)?;

    let plan = match &resolved.regions {
        Some(grid) => Some(plan_grid(&ds, grid)?),
        None => None,
    };
    let (train_recs, eval_recs, normalizer) = match &plan {
        Some(p) => {
            let owned: Vec<BuildingRecord> = p.train.iter().map(|r| (*r).clone()).collect();
            let n = match p.scope {
                TrainScope::Regions => Normalizer::fit(&owned, &ds.schema_hash())?,
                TrainScope::Full => ds.normalizer()?.clone(),
            };
            (p.train.clone(), p.eval.clone(), n)
        }
        None => (ds.train_records(), ds.test_records(), ds.normalizer()?.clone()),
    };
    if train_recs.is_empty() {
        return Err(ExperimentError::Config("no training records selected".into()));
    }

    let outcome = fit(&resolved, &ds, &normalizer, &train_recs, &eval_recs, &dir)?;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    Checkpoint {
        params: outcome.best.clone(),
        schema_hash: ds.schema_hash(),
        seed: resolved.seed,
        epoch: outcome.best_epoch,
    }
    .save(&ckpt_path)?;
    write_curve_csv(&dir.join("curve.csv"), &outcome.state.curve)?;
    write_json(&dir.join(NORMALIZER_FILE), &normalizer)?;

    // Evaluate what was written, not what is in memory.
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let ckpt_hash = file_hash(&ckpt_path)?;
    let ev = Evaluator {
        checkpoint: &ckpt,
        checkpoint_sha256: ckpt_hash.clone(),
        dataset: &ds,
        dataset_hash: ds_hash.clone(),
        normalizer: &normalizer,
    };
    let (metrics, regions) = match &plan {
        None => {
            let recs = if eval_recs.is_empty() { ds.records.iter().collect() } else { eval_recs.clone() };
            (Some(ev.evaluate(&dir, &recs, &resolved.mask)?), Vec::new())
        }
        Some(p) => (None, run_grid(&ev, p, &dir, &resolved.mask)?),
    };

    let manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        config: resolved,
        dataset_hash: ds_hash,
        schema_hash: ds.schema_hash(),
        mask_features: mask_names(&mask, &ds),
        class_weights: outcome.class_weights,
        n_train: train_recs.len(),
        n_eval: eval_recs.len(),
        best_epoch: outcome.best_epoch,
        checkpoint_sha256: ckpt_hash,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(RunOutcome {
        dir,
        manifest,
        metrics,
        regions,
    })
}

struct GridPlan<'a> {
    scope: TrainScope,
    train_regions: Vec<String>,
    train: Vec<&'a BuildingRecord>,
    eval: Vec<&'a BuildingRecord>,
    /// (region, seen, records scored)
    tests: Vec<(String, bool, Vec<&'a BuildingRecord>)>,
}

fn region_members(ds: &Dataset, grid: &RegionGrid) -> Result<BTreeMap<String, BTreeSet<FootprintId>>, ExperimentError> {
    let mut out: BTreeMap<String, BTreeSet<FootprintId>> = BTreeMap::new();
    match &grid.polygons {
        Some(path) => {
            let split = split_by_region(&ds.records, &read_named_polygons(path)?);
            if !split.unassigned.is_empty() {
                log::warn!("{} records fall outside every region polygon", split.unassigned.len());
            }
            for (name, ids) in split.regions {
                out.insert(name, ids.into_iter().collect());
            }
        }
        None => {
            for r in &ds.records {
                if let Some(name) = &r.region {
                    out.entry(name.clone()).or_default().insert(r.id.clone());
                }
            }
        }
    }
    Ok(out)
}

fn plan_grid<'a>(ds: &'a Dataset, grid: &RegionGrid) -> Result<GridPlan<'a>, ExperimentError> {
    if grid.train.is_empty() || grid.test.is_empty() {
        return Err(ExperimentError::Config("region grid needs train and test regions".into()));
    }
    let members = region_members(ds, grid)?;
    for name in grid.train.iter().chain(&grid.test) {
        if !members.contains_key(name) {
            let known: Vec<&String> = members.keys().collect();
            return Err(ExperimentError::Config(format!("unknown region {name:?}; known: {known:?}")));
        }
    }
    let in_any = |names: &[String], id: &FootprintId| names.iter().any(|n| members[n].contains(id));
    let (train_split, test_split) = (ds.train_records(), ds.test_records());
    let (train, eval) = match grid.scope {
        TrainScope::Regions => (
            train_split.iter().copied().filter(|r| in_any(&grid.train, &r.id)).collect(),
            test_split.iter().copied().filter(|r| in_any(&grid.train, &r.id)).collect(),
        ),
        TrainScope::Full => (train_split.clone(), test_split.clone()),
    };
    let tests = grid
        .test
        .iter()
        .map(|name| {
            let seen = grid.train.contains(name);
            let pool: Vec<&BuildingRecord> = if seen || grid.scope == TrainScope::Full {
                test_split.clone()
            } else {
                ds.records.iter().collect()
            };
            let recs = pool.into_iter().filter(|r| members[name].contains(&r.id)).collect();
            (name.clone(), seen, recs)
        })
        .collect();
    Ok(GridPlan {
        scope: grid.scope,
        train_regions: grid.train.clone(),
        train,
        eval,
        tests,
    })
}

fn run_grid(
    ev: &Evaluator<'_>,
    plan: &GridPlan<'_>,
    dir: &Path,
    mask: &MaskChoice,
) -> Result<Vec<RegionResult>, ExperimentError> {
    let mut results = Vec::new();
    for (name, seen, recs) in &plan.tests {
        let metrics = if recs.is_empty() {
            log::warn!("region {name}: no records to score");
            None
        } else {
            Some(ev.evaluate(&dir.join(format!("region_{name}")), recs, mask)?)
        };
        results.push(RegionResult {
            region: name.clone(),
            seen: *seen,
            n: recs.len(),
            metrics,
        });
    }
    write_json(
        &dir.join("generalization.json"),
        &GridSummary {
            train_regions: plan.train_regions.clone(),
            scope: plan.scope,
            regions: results.clone(),
        },
    )?;
    Ok(results)
}
