use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::RegionResult;
use super::{ExperimentError, RunManifest, MANIFEST_FILE};
use crate::model::EmbeddingVariant;

/// Column names in table order.
pub const METRIC_NAMES: [&str; 5] = ["Accuracy", "Precision", "Recall", "F1-Score", "AUCROC"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub difference: f64,
    /// `difference / baseline` in percent; `None` for a zero baseline.
    pub relative_pct: Option<f64>,
}

/// `value - baseline` and its size relative to the baseline.
pub fn improvement(value: f64, baseline: f64) -> Improvement {
    let difference = value - baseline;
    Improvement {
        difference,
        relative_pct: (baseline != 0.0).then(|| 100.0 * difference / baseline),
    }
}

/// The fields of `metrics.json` the tables need.
#[derive(Deserialize)]
struct Headline {
    accuracy: f64,
    macro_precision: f64,
    macro_recall: f64,
    macro_f1: f64,
    macro_auc: Option<f64>,
    n_samples: usize,
}

impl Headline {
    fn values(&self) -> [Option<f64>; 5] {
        [
            Some(self.accuracy),
            Some(self.macro_precision),
            Some(self.macro_recall),
            Some(self.macro_f1),
            self.macro_auc,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub run: String,
    pub dir: PathBuf,
    /// `None` when the metrics file is missing or unreadable.
    pub values: Option<[Option<f64>; 5]>,
    pub n: usize,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub run: String,
    pub baseline: String,
    pub metric: String,
    pub value: f64,
    pub baseline_value: f64,
    pub improvement: Improvement,
}

/// Training-region value against the mean over unseen regions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub run: String,
    pub metric: String,
    pub train_value: f64,
    pub unseen_mean: f64,
    pub unseen_regions: usize,
    pub reduction: Improvement,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<RunRow>,
    pub comparisons: Vec<Comparison>,
    pub deltas: Vec<DeltaRow>,
}

#[derive(Deserialize)]
struct Grid {
    regions: Vec<RegionResult>,
}

struct Loaded {
    name: String,
    manifest: Option<RunManifest>,
}

fn read_manifest(dir: &Path) -> Option<RunManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

fn read_headline(path: &Path) -> Result<Headline, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("absent: {e}"))?;
    serde_json::from_str(&text).map_err(|e| format!("unreadable: {e}"))
}

fn region_values(r: &RegionResult) -> Option<[Option<f64>; 5]> {
    r.metrics.as_ref().map(|m| {
        [
            Some(m.accuracy),
            Some(m.macro_precision),
            Some(m.macro_recall),
            Some(m.macro_f1),
            m.macro_auc,
        ]
    })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn deltas(run: &str, regions: &[RegionResult]) -> Vec<DeltaRow> {
    let mut out = Vec::new();
    for (m, name) in METRIC_NAMES.iter().enumerate() {
        let pick = |seen: bool| -> Vec<f64> {
            regions
                .iter()
                .filter(|r| r.seen == seen)
                .filter_map(|r| region_values(r).and_then(|v| v[m]))
                .collect()
        };
        let (seen, unseen) = (pick(true), pick(false));
        if let (Some(t), Some(u)) = (mean(&seen), mean(&unseen)) {
            out.push(DeltaRow {
                run: run.to_string(),
                metric: name.to_string(),
                train_value: t,
                unseen_mean: u,
                unseen_regions: unseen.len(),
                // Positive when unseen regions score lower; relative to the training region.
                reduction: Improvement {
                    difference: t - u,
                    relative_pct: (t != 0.0).then(|| 100.0 * (t - u) / t),
                },
            });
        }
    }
    out
}

fn is_image_only(m: &Option<RunManifest>) -> bool {
    m.as_ref()
        .is_some_and(|m| m.config.model.embedding_variant == EmbeddingVariant::None)
}

/// Picks each run's baseline: the named run, or else the single image-only
/// run on the same dataset with the same mask.
fn baseline_for<'a>(run: &Loaded, all: &'a [Loaded], named: Option<&str>) -> Option<&'a Loaded> {
    if let Some(b) = named {
        return all.iter().find(|l| l.name == b && l.name != run.name);
    }
    let m = run.manifest.as_ref()?;
    if is_image_only(&run.manifest) {
        return None;
    }
    let mut c = all.iter().filter(|l| {
        is_image_only(&l.manifest)
            && l.manifest
                .as_ref()
                .is_some_and(|o| o.dataset_hash == m.dataset_hash && o.config.mask == m.config.mask)
    });
    let first = c.next()?;
    c.next().is_none().then_some(first)
}

fn f3(v: f64) -> String {
    format!("{v:.3}")
}

fn pct(v: Option<f64>) -> String {
    v.map_or(String::new(), |p| format!("{p:.1}%"))
}

/// Writes a CSV table.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ExperimentError::Io(e.into()))?;
    w.write_record(header).map_err(|e| ExperimentError::Io(e.into()))?;
    for r in rows {
        w.write_record(r).map_err(|e| ExperimentError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

/// Builds `summary.csv`, `comparison.csv` and `generalization_delta.csv`
/// in `out` from run directories. A run without readable metrics is
/// listed as absent. `baseline` names the reference run; without it each
/// metadata model is compared with its image-only twin when there is
/// exactly one.
pub fn report(run_dirs: &[PathBuf], baseline: Option<&str>, out: &Path) -> Result<Report, ExperimentError> {
    if run_dirs.is_empty() {
        return Err(ExperimentError::Config("report needs at least one run directory".into()));
    }
    let mut rows = Vec::new();
    let mut loaded = Vec::new();
    let mut delta_rows = Vec::new();
    for dir in run_dirs {
        let manifest = read_manifest(dir);
        let name = manifest.as_ref().map_or_else(
            || dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned()),
            |m| m.config.name.clone(),
        );
        let grid_path = dir.join("generalization.json");
        if grid_path.is_file() {
            let grid: Grid = serde_json::from_str(&fs::read_to_string(&grid_path)?)?;
            for r in &grid.regions {
                let values = region_values(r);
                rows.push(RunRow {
                    run: format!("{name}/{}", r.region),
                    dir: dir.join(format!("region_{}", r.region)),
                    note: match (values.is_some(), r.seen) {
                        (false, _) => "absent: no records".into(),
                        (true, true) => "seen".into(),
                        (true, false) => "unseen".into(),
                    },
                    values,
                    n: r.n,
                });
            }
            delta_rows.extend(deltas(&name, &grid.regions));
        } else {
            match read_headline(&dir.join("metrics.json")) {
                Ok(h) => rows.push(RunRow {
                    run: name.clone(),
                    dir: dir.clone(),
                    values: Some(h.values()),
                    n: h.n_samples,
                    note: String::new(),
                }),
                Err(note) => {
                    log::warn!("{}: {note}", dir.display());
                    rows.push(RunRow {
                        run: name.clone(),
                        dir: dir.clone(),
                        values: None,
                        n: 0,
                        note,
                    });
                }
            }
        }
        loaded.push(Loaded { name, manifest });
    }

    let mut comparisons = Vec::new();
    for l in &loaded {
        let Some(b) = baseline_for(l, &loaded, baseline) else { continue };
        let find = |n: &str| rows.iter().find(|r| r.run == n).and_then(|r| r.values);
        let (Some(v), Some(bv)) = (find(&l.name), find(&b.name)) else { continue };
        for (m, metric) in METRIC_NAMES.iter().enumerate() {
            if let (Some(x), Some(y)) = (v[m], bv[m]) {
                comparisons.push(Comparison {
                    run: l.name.clone(),
                    baseline: b.name.clone(),
                    metric: metric.to_string(),
                    value: x,
                    baseline_value: y,
                    improvement: improvement(x, y),
                });
            }
        }
    }

    fs::create_dir_all(out)?;
    let opt3 = |v: Option<f64>| v.map_or(String::new(), f3);
    let summary: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.run.clone(), if r.values.is_some() { "ok".into() } else { "absent".into() }, r.n.to_string()];
            row.extend((0..5).map(|m| opt3(r.values.and_then(|v| v[m]))));
            row.push(r.note.clone());
            row
        })
        .collect();
    write_table(
        &out.join("summary.csv"),
        &["run", "status", "n", "Accuracy", "Precision", "Recall", "F1-Score", "AUCROC", "note"],
        &summary,
    )?;
    let cmp: Vec<Vec<String>> = comparisons
        .iter()
        .map(|c| {
            vec![
                c.run.clone(),
                c.baseline.clone(),
                c.metric.clone(),
                f3(c.value),
                f3(c.baseline_value),
                f3(c.improvement.difference),
                pct(c.improvement.relative_pct),
            ]
        })
        .collect();
    write_table(
        &out.join("comparison.csv"),
        &["run", "baseline", "metric", "value", "baseline_value", "difference", "relative_improvement"],
        &cmp,
    )?;
    let dl: Vec<Vec<String>> = delta_rows
        .iter()
        .map(|d| {
            vec![
                d.run.clone(),
                d.metric.clone(),
                f3(d.train_value),
                f3(d.unseen_mean),
                d.unseen_regions.to_string(),
                f3(d.reduction.difference),
                pct(d.reduction.relative_pct),
            ]
        })
        .collect();
    write_table(
        &out.join("generalization_delta.csv"),
        &["run", "metric", "train_region", "unseen_mean", "unseen_regions", "reduction", "relative_reduction"],
        &dl,
    )?;
    Ok(Report {
        rows,
        comparisons,
        deltas: delta_rows,
    })
}
