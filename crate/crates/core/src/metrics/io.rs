use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{DiffHistogram, MetricsError, MetricsReport, RocCurve};
use crate::geo::{io::polygon_geometry, Footprint, FootprintId};

pub fn write_metrics_json(path: &Path, report: &MetricsReport) -> Result<(), MetricsError> {
    let s = serde_json::to_string_pretty(report).expect("report serialises");
    fs::write(path, s + "\n")?;
    Ok(())
}

/// `threshold,fpr,tpr` rows; the leading +inf threshold is written as `inf`.
pub fn write_roc_csv(path: &Path, curve: &RocCurve) -> Result<(), MetricsError> {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in &curve.points {
        s.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_diff_hist_csv(path: &Path, h: &DiffHistogram) -> Result<(), MetricsError> {
    let mut s = String::from("abs_diff,count,percent\n");
    for (d, (c, p)) in h.counts.iter().zip(&h.percent).enumerate() {
        s.push_str(&format!("{d},{c},{p:.4}\n"));
    }
    fs::write(path, s)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: FootprintId,
    pub true_class: i64,
    pub pred_class: i64,
}

/// FeatureCollection of the footprints with `true_class`, `pred_class` and
/// `abs_diff` properties. Every footprint needs exactly one row and vice
/// versa.
pub fn export_evaluation_map(footprints: &[&Footprint], rows: &[EvalRow]) -> Result<Value, MetricsError> {
    let mut by_id: BTreeMap<&FootprintId, &EvalRow> = BTreeMap::new();
    for r in rows {
        if by_id.insert(&r.id, r).is_some() {
            return Err(MetricsError::Join(format!("duplicate prediction for {}", r.id)));
        }
    }
    if footprints.len() != rows.len() {
        return Err(MetricsError::Join(format!(
            "{} footprints vs {} predictions",
            footprints.len(),
            rows.len()
        )));
    }
    let features = footprints
        .iter()
        .map(|fp| {
            let r = by_id
                .get(&fp.id)
                .ok_or_else(|| MetricsError::Join(format!("no prediction for footprint {}", fp.id)))?;
            Ok(json!({
                "type": "Feature",
                "geometry": polygon_geometry(fp),
                "properties": {
                    "id": fp.id.0,
                    "true_class": r.true_class,
                    "pred_class": r.pred_class,
                    "abs_diff": (r.true_class - r.pred_class).abs(),
                },
            }))
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(json!({ "type": "FeatureCollection", "features": features }))
}
