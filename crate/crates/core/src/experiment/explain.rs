use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{check_compat, checkpoint_normalizer, open_dataset, write_json};
use super::{ExperimentError, MaskChoice};
use crate::attribution::{
    sample_background, shapley_exact, shapley_sampled, summarize_classwise, write_shap_values_csv,
    write_summaries, Attribution, ClassSummary, FeatureGroups, Instance, NetworkModel, SamplingConfig,
};
use crate::dataset::BuildingRecord;
use crate::geo::FootprintId;
use crate::model::{file_hash, Checkpoint};

/// Records to explain: the first `n` of the test split, or explicit ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordSelection {
    First(usize),
    Ids(Vec<String>),
}

impl RecordSelection {
    /// A bare count, or a comma-separated id list.
    pub fn parse(s: &str) -> Self {
        match s.trim().parse() {
            Ok(n) => RecordSelection::First(n),
            Err(_) => RecordSelection::Ids(s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainOptions {
    /// Enumerate all coalitions instead of sampling permutations.
    pub exact: bool,
    pub sampling: SamplingConfig,
    /// Background records drawn from the train split.
    pub background: usize,
    pub background_seed: u64,
    pub mask: MaskChoice,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions {
            exact: false,
            sampling: SamplingConfig::default(),
            background: 32,
            background_seed: 0,
            mask: MaskChoice::None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExplainOutcome {
    pub records: Vec<String>,
    pub groups: FeatureGroups,
    pub attributions: Vec<Attribution>,
    pub summaries: Vec<ClassSummary>,
}

#[derive(Serialize)]
struct ExplainInfo<'a> {
    checkpoint_sha256: String,
    dataset_hash: &'a str,
    options: &'a ExplainOptions,
    background: Vec<&'a str>,
    records: &'a [String],
}

/// Shapley attributions over metadata features plus the image for the
/// selected records. Writes `shap_values.csv`, per-class
/// `shap_summary_<class>.csv` / `shap_points_<class>.csv` and
/// `attribution.json` to `out`.
pub fn explain(
    checkpoint: &Path,
    dataset: &Path,
    selection: &RecordSelection,
    opts: &ExplainOptions,
    out: &Path,
) -> Result<ExplainOutcome, ExperimentError> {
    let (ds, ds_hash) = open_dataset(dataset)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    check_compat(&ckpt, &ds)?;
    let normalizer = checkpoint_normalizer(checkpoint, &ds)?;
    let mask = opts.mask.resolve(&ds.schema)?;

    let targets: Vec<&BuildingRecord> = match selection {
        RecordSelection::First(n) => {
            let pool = ds.test_records();
            let pool = if pool.is_empty() { ds.records.iter().collect() } else { pool };
            pool.into_iter().take(*n).collect()
        }
        RecordSelection::Ids(ids) => ids
            .iter()
            .map(|id| {
                ds.record(&FootprintId(id.clone()))
                    .ok_or_else(|| ExperimentError::Config(format!("no record with id {id:?}")))
            })
            .collect::<Result<_, _>>()?,
    };
    if targets.is_empty() {
        return Err(ExperimentError::Config("no records selected".into()));
    }
    let train = ds.train_records();
    let bg_recs: Vec<&BuildingRecord> = sample_background(train.len(), opts.background, opts.background_seed)
        .into_iter()
        .map(|i| train[i])
        .collect();
    let instance = |r: &BuildingRecord| -> Result<Instance, ExperimentError> {
        let s = normalizer.apply(r)?;
        Ok(Instance {
            image: s.image,
            metadata: s.metadata,
        })
    };
    let background = bg_recs.iter().map(|r| instance(r)).collect::<Result<Vec<_>, _>>()?;

    let groups = FeatureGroups::new(ds.schema.features.iter().map(|f| f.name.clone()).collect(), true);
    let model = NetworkModel {
        params: &ckpt.params,
        mask,
    };
    let mut attributions = Vec::with_capacity(targets.len());
    for r in &targets {
        let x = instance(r)?;
        let a = if opts.exact {
            shapley_exact(&model, &x, &background, &groups)?
        } else {
            shapley_sampled(&model, &x, &background, &groups, &opts.sampling)?
        };
        attributions.push(a);
    }

    let class_names: Vec<String> = (0..ds.scheme.n_classes())
        .map(|c| ds.scheme.from_index(c).value.to_string())
        .collect();
    let ids: Vec<String> = targets.iter().map(|r| r.id.0.clone()).collect();
    let raw: Vec<Instance> = targets
        .iter()
        .map(|r| Instance {
            image: Vec::new(),
            metadata: r.metadata.clone(),
        })
        .collect();
    let rows: Vec<(String, &Instance, &Attribution)> = ids
        .iter()
        .zip(&raw)
        .zip(&attributions)
        .map(|((id, x), a)| (id.clone(), x, a))
        .collect();
    let summaries = summarize_classwise(&groups, &class_names, &rows);

    std::fs::create_dir_all(out)?;
    let pairs: Vec<(String, &Attribution)> = ids.iter().cloned().zip(&attributions).collect();
    write_shap_values_csv(&out.join("shap_values.csv"), &groups, &class_names, &pairs)?;
    write_summaries(out, &summaries)?;
    write_json(
        &out.join("attribution.json"),
        &ExplainInfo {
            checkpoint_sha256: file_hash(checkpoint)?,
            dataset_hash: &ds_hash,
            options: opts,
            background: bg_recs.iter().map(|r| r.id.0.as_str()).collect(),
            records: &ids,
        },
    )?;
    Ok(ExplainOutcome {
        records: ids,
        groups,
        attributions,
        summaries,
    })
}
