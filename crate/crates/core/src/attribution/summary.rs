use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Attribution, AttributionError, FeatureGroups, Instance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRank {
    pub rank: usize,
    pub feature: String,
    pub mean_abs: f64,
}

/// One (record, feature) point for summary plots. `value` is the raw
/// metadata value, `None` for the image or a masked feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryPoint {
    pub record: String,
    pub feature: String,
    pub value: Option<f64>,
    pub shap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: String,
    pub ranking: Vec<FeatureRank>,
    pub points: Vec<SummaryPoint>,
}

/// Per class: groups ranked by mean |value| (ties keep group order) and
/// the per-point rows. `records` pairs each attribution with its id and
/// the raw (unnormalised) instance.
pub fn summarize_classwise(
    groups: &FeatureGroups,
    class_names: &[String],
    records: &[(String, &Instance, &Attribution)],
) -> Vec<ClassSummary> {
    let n = groups.len();
    class_names
        .iter()
        .enumerate()
        .map(|(c, class)| {
            let mut means: Vec<(usize, f64)> = (0..n)
                .map(|g| {
                    let s: f64 = records.iter().map(|(_, _, a)| a.values[g][c].abs()).sum();
                    (g, s / records.len().max(1) as f64)
                })
                .collect();
            means.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let ranking = means
                .iter()
                .enumerate()
                .map(|(r, &(g, m))| FeatureRank {
                    rank: r + 1,
                    feature: groups.name(g).to_string(),
                    mean_abs: m,
                })
                .collect();
            let points = records
                .iter()
                .flat_map(|(id, x, a)| {
                    (0..n).map(move |g| SummaryPoint {
                        record: id.clone(),
                        feature: groups.name(g).to_string(),
                        value: (g < groups.names.len() && !x.metadata.mask[g]).then(|| x.metadata.values[g]),
                        shap: a.values[g][c],
                    })
                })
                .collect();
            ClassSummary {
                class: class.clone(),
                ranking,
                points,
            }
        })
        .collect()
}

/// `record,class,feature,value,stderr`
pub fn write_shap_values_csv(
    path: &Path,
    groups: &FeatureGroups,
    class_names: &[String],
    records: &[(String, &Attribution)],
) -> Result<(), AttributionError> {
    let mut s = String::from("record,class,feature,value,stderr\n");
    for (id, a) in records {
        for (c, class) in class_names.iter().enumerate() {
            for g in 0..groups.len() {
                writeln!(s, "{id},{class},{},{},{}", groups.name(g), a.values[g][c], a.stderr[g][c]).unwrap();
            }
        }
    }
    fs::write(path, s)?;
    Ok(())
}

/// `shap_summary_<class>.csv` (rank, feature, mean_abs_shap) and
/// `shap_points_<class>.csv` (record, feature, value, shap) per class.
pub fn write_summaries(dir: &Path, summaries: &[ClassSummary]) -> Result<(), AttributionError> {
    for cs in summaries {
        let mut s = String::from("rank,feature,mean_abs_shap\n");
        for r in &cs.ranking {
            writeln!(s, "{},{},{}", r.rank, r.feature, r.mean_abs).unwrap();
        }
        fs::write(dir.join(format!("shap_summary_{}.csv", cs.class)), s)?;
        let mut p = String::from("record,feature,value,shap\n");
        for pt in &cs.points {
            let v = pt.value.map_or(String::new(), |v| v.to_string());
            writeln!(p, "{},{},{v},{}", pt.record, pt.feature, pt.shap).unwrap();
        }
        fs::write(dir.join(format!("shap_points_{}.csv", cs.class)), p)?;
    }
    Ok(())
}
