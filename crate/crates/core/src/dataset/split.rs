use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BuildingRecord, DatasetError};
use crate::geo::{contains, Footprint, FootprintId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<FootprintId>,
    pub test: Vec<FootprintId>,
    pub seed: u64,
    pub fraction: f64,
}

/// Stratified seeded split. Per-class train counts use largest-remainder
/// rounding so the overall train size is `round(fraction * n)`; a class with
/// at least two records always lands on both sides.
pub fn split_random(
    items: &[(FootprintId, usize)],
    n_classes: usize,
    fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, DatasetError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(fraction));
    }
    let mut by_class: Vec<Vec<FootprintId>> = vec![Vec::new(); n_classes];
    for (id, class) in items {
        by_class
            .get_mut(*class)
            .ok_or_else(|| DatasetError::Schema(format!("class index {class} >= {n_classes}")))?
            .push(id.clone());
    }
    for (c, ids) in by_class.iter().enumerate() {
        if ids.is_empty() {
            log::warn!("class index {c} has no records; it will be absent from both splits");
        }
    }

    let total = items.len();
    let target = (fraction * total as f64).round() as usize;
    let mut alloc: Vec<usize> = by_class
        .iter()
        .map(|ids| (fraction * ids.len() as f64).floor() as usize)
        .collect();
    let mut order: Vec<usize> = (0..n_classes).collect();
    let remainder = |c: usize| fraction * by_class[c].len() as f64 - alloc[c] as f64;
    order.sort_by(|&a, &b| remainder(b).total_cmp(&remainder(a)).then(a.cmp(&b)));
    let mut missing = target.saturating_sub(alloc.iter().sum());
    for &c in order.iter().cycle().take(n_classes * 2) {
        if missing == 0 {
            break;
        }
        if alloc[c] < by_class[c].len() {
            alloc[c] += 1;
            missing -= 1;
        }
    }
    for (c, ids) in by_class.iter().enumerate() {
        if ids.len() >= 2 {
            alloc[c] = alloc[c].clamp(1, ids.len() - 1);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(target);
    let mut test = Vec::with_capacity(total - target);
    for (c, mut ids) in by_class.into_iter().enumerate() {
        ids.sort();
        ids.shuffle(&mut rng);
        let rest = ids.split_off(alloc[c]);
        train.extend(ids);
        test.extend(rest);
    }
    train.sort();
    test.sort();
    Ok(DatasetSplit {
        train,
        test,
        seed,
        fraction,
    })
}

/// Records bucketed by the region polygon containing their centroid.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RegionSplit {
    pub regions: BTreeMap<String, Vec<FootprintId>>,
    pub unassigned: Vec<FootprintId>,
}

/// Assigns each record to the first region (in the given order) containing
/// its centroid.
pub fn split_by_region(records: &[BuildingRecord], regions: &[(String, Footprint)]) -> RegionSplit {
    let mut out = RegionSplit::default();
    for (name, _) in regions {
        out.regions.entry(name.clone()).or_default();
    }
    for r in records {
        match regions.iter().find(|(_, poly)| contains(poly, r.centroid)) {
            Some((name, _)) => out.regions.get_mut(name).expect("pre-seeded").push(r.id.clone()),
            None => out.unassigned.push(r.id.clone()),
        }
    }
    out
}

/// Inverse-frequency weights `N / (K * n_c)`; a balanced set gives all ones.
pub fn class_weights(labels: &[usize], n_classes: usize) -> Result<Vec<f64>, DatasetError> {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        *counts
            .get_mut(l)
            .ok_or_else(|| DatasetError::Schema(format!("class index {l} >= {n_classes}")))? += 1;
    }
    class_weights_from_counts(&counts)
}

pub fn class_weights_from_counts(counts: &[usize]) -> Result<Vec<f64>, DatasetError> {
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(DatasetError::EmptyClass(c));
    }
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts
        .iter()
        .map(|&n| total as f64 / (k * n as f64))
        .collect())
}
