use serde::{Deserialize, Serialize};

use super::{BuildingRecord, DatasetError, MetadataVector};

const STD_FLOOR: f64 = 1e-8;

/// Per-feature metadata and per-channel image z-scoring fitted on a train set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub schema_hash: String,
    pub meta_mean: Vec<f64>,
    pub meta_std: Vec<f64>,
    pub image_mean: [f64; 3],
    pub image_std: [f64; 3],
}

/// Model-ready input: channel-major normalised tile, normalised metadata
/// (masked entries are 0) and a zero-based class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Vec<f64>,
    pub image_size: usize,
    pub metadata: MetadataVector,
    pub label: usize,
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (0.0, 1.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(STD_FLOOR))
}

impl Normalizer {
    /// Population moments over unmasked metadata entries and all tile pixels.
    pub fn fit(train: &[BuildingRecord], schema_hash: &str) -> Result<Self, DatasetError> {
        let first = train.first().ok_or(DatasetError::Empty)?;
        let d = first.metadata.len();
        let (meta_mean, meta_std) = (0..d)
            .map(|j| {
                mean_std(
                    train
                        .iter()
                        .filter(|r| !r.metadata.mask[j])
                        .map(|r| r.metadata.values[j]),
                )
            })
            .unzip();
        let mut image_mean = [0.0; 3];
        let mut image_std = [1.0; 3];
        for c in 0..3 {
            let (m, s) = mean_std(
                train
                    .iter()
                    .flat_map(|r| r.tile.rgb.iter().skip(c).step_by(3))
                    .map(|&v| f64::from(v) / 255.0),
            );
            image_mean[c] = m;
            image_std[c] = s;
        }
        Ok(Normalizer {
            schema_hash: schema_hash.to_string(),
            meta_mean,
            meta_std,
            image_mean,
            image_std,
        })
    }

    pub fn apply_metadata(&self, m: &MetadataVector) -> MetadataVector {
        let values = m
            .values
            .iter()
            .zip(&m.mask)
            .enumerate()
            .map(|(j, (&v, &masked))| {
                if masked {
                    0.0
                } else {
                    (v - self.meta_mean[j]) / self.meta_std[j]
                }
            })
            .collect();
        MetadataVector {
            values,
            mask: m.mask.clone(),
        }
    }

    pub fn apply(&self, r: &BuildingRecord) -> Result<Sample, DatasetError> {
        if r.metadata.len() != self.meta_mean.len() {
            return Err(DatasetError::Schema(format!(
                "record {} has {} metadata values, normaliser expects {}",
                r.id,
                r.metadata.len(),
                self.meta_mean.len()
            )));
        }
        if r.tile.width != r.tile.height {
            return Err(DatasetError::Image(format!("tile of {} is not square", r.id)));
        }
        let hw = r.tile.width * r.tile.height;
        let mut image = r.tile.to_unit();
        for c in 0..3 {
            for v in &mut image[c * hw..(c + 1) * hw] {
                *v = (*v - self.image_mean[c]) / self.image_std[c];
            }
        }
        Ok(Sample {
            image,
            image_size: r.tile.width,
            metadata: self.apply_metadata(&r.metadata),
            label: r.label.index(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit_meta(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (mean, std): (Vec<f64>, Vec<f64>) = (0..rows[0].len())
            .map(|j| mean_std(rows.iter().map(|r| r[j])))
            .unzip();
        let n = Normalizer {
            schema_hash: String::new(),
            meta_mean: mean,
            meta_std: std,
            image_mean: [0.0; 3],
            image_std: [1.0; 3],
        };
        rows.iter()
            .map(|r| n.apply_metadata(&MetadataVector::unmasked(r.clone())).values)
            .collect()
    }

    #[test]
    fn constant_feature_becomes_zero() {
        let out = fit_meta(&[vec![3.0], vec![3.0], vec![3.0]]);
        assert!(out.iter().all(|r| r[0] == 0.0));
    }

    #[test]
    fn two_point_z_score() {
        let out = fit_meta(&[vec![0.0], vec![2.0]]);
        assert_eq!(out, [vec![-1.0], vec![1.0]]);
    }

    #[test]
    fn masked_entries_are_zero() {
        let n = Normalizer {
            schema_hash: String::new(),
            meta_mean: vec![5.0, 5.0],
            meta_std: vec![2.0, 2.0],
            image_mean: [0.0; 3],
            image_std: [1.0; 3],
        };
        let v = n.apply_metadata(&MetadataVector::new(vec![9.0, 9.0], vec![false, true]).unwrap());
        assert_eq!(v.values, [2.0, 0.0]);
    }
}
