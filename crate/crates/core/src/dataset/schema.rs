use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DatasetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Raster,
    Contour,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetadataFeature {
    /// Also the catalog key of the field it is sampled from.
    pub name: String,
    pub unit: String,
    pub source: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_rank: Option<u8>,
}

impl MetadataFeature {
    pub fn raster(name: &str, unit: &str) -> Self {
        MetadataFeature {
            name: name.into(),
            unit: unit.into(),
            source: SourceKind::Raster,
            event_rank: None,
        }
    }

    pub fn contour(name: &str, unit: &str, event_rank: u8) -> Self {
        MetadataFeature {
            name: name.into(),
            unit: unit.into(),
            source: SourceKind::Contour,
            event_rank: Some(event_rank),
        }
    }
}

/// Ordered metadata features; the order is fixed for the life of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataSchema {
    pub features: Vec<MetadataFeature>,
}

/// Seismic quantities recorded per event, with units.
pub const SEISMIC_QUANTITIES: [(&str, &str); 6] = [
    ("MI", "MMI"),
    ("PGA", "g"),
    ("PGV", "cm/s"),
    ("PSA0.3", "g"),
    ("PSA1.0", "g"),
    ("PSA3.0", "g"),
];

/// SAR-derived features withheld by the `SAR` mask.
pub const SAR_FEATURES: [&str; 3] = ["SAR-VV", "SAR-VH", "DPM"];

impl MetadataSchema {
    pub fn new(features: Vec<MetadataFeature>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(DatasetError::Schema(format!("duplicate feature {}", f.name)));
            }
        }
        Ok(MetadataSchema { features })
    }

    /// 30 seismic features (6 quantities x 5 events) plus SAR-VV, SAR-VH,
    /// DPM and VS30.
    pub fn turkiye_l() -> Self {
        let mut features = Vec::with_capacity(34);
        for rank in 1..=5u8 {
            for (q, unit) in SEISMIC_QUANTITIES {
                features.push(MetadataFeature::contour(&format!("{q}-E{rank}"), unit, rank));
            }
        }
        features.push(MetadataFeature::raster("SAR-VV", "dB"));
        features.push(MetadataFeature::raster("SAR-VH", "dB"));
        features.push(MetadataFeature::raster("DPM", "coherence change"));
        features.push(MetadataFeature::raster("VS30", "m/s"));
        MetadataSchema { features }
    }

    /// Damage proxies from Sentinel-1 and ALOS-2, ADI, NDBI and PGA.
    pub fn turkiye_s() -> Self {
        MetadataSchema {
            features: vec![
                MetadataFeature::raster("DP-S1", "proxy"),
                MetadataFeature::raster("DP-ALOS2", "proxy"),
                MetadataFeature::raster("ADI", "index"),
                MetadataFeature::raster("NDBI", "index"),
                MetadataFeature::contour("PGA", "g", 1),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Stable content hash used to pair datasets, normalisers and checkpoints.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("schema serialises");
        crate::hex(&Sha256::digest(canonical))
    }
}

/// One value per schema feature plus a mask bit (true = unavailable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataVector {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl MetadataVector {
    pub fn new(values: Vec<f64>, mask: Vec<bool>) -> Result<Self, DatasetError> {
        if values.len() != mask.len() {
            return Err(DatasetError::Schema(format!(
                "{} values but {} mask bits",
                values.len(),
                mask.len()
            )));
        }
        Ok(MetadataVector { values, mask })
    }

    pub fn unmasked(values: Vec<f64>) -> Self {
        let mask = vec![false; values.len()];
        MetadataVector { values, mask }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
