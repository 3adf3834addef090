use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::DatasetError;

/// Damage label schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelScheme {
    /// 1 Slightly Damaged, 2 Heavily Damaged, 3 Needs to be demolished, 4 Collapsed.
    L4,
    /// L4 plus 0 No damage.
    S5,
}

impl LabelScheme {
    pub fn n_classes(self) -> usize {
        match self {
            LabelScheme::L4 => 4,
            LabelScheme::S5 => 5,
        }
    }

    pub fn min_value(self) -> u8 {
        match self {
            LabelScheme::L4 => 1,
            LabelScheme::S5 => 0,
        }
    }

    pub fn class_name(self, value: u8) -> &'static str {
        match value {
            0 => "No damage",
            1 => "Slightly Damaged",
            2 => "Heavily Damaged",
            3 => "Needs to be demolished",
            4 => "Collapsed",
            _ => "unknown",
        }
    }

    pub fn label(self, value: i64) -> Result<DamageLabel, DatasetError> {
        let lo = i64::from(self.min_value());
        if value < lo || value >= lo + self.n_classes() as i64 {
            return Err(DatasetError::InvalidLabel {
                value,
                scheme: self,
            });
        }
        Ok(DamageLabel {
            value: value as u8,
            scheme: self,
        })
    }

    pub fn from_index(self, index: usize) -> DamageLabel {
        assert!(index < self.n_classes(), "class index {index} out of range");
        DamageLabel {
            value: self.min_value() + index as u8,
            scheme: self,
        }
    }
}

/// Ordinal damage class; orders by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DamageLabel {
    pub value: u8,
    pub scheme: LabelScheme,
}

impl DamageLabel {
    /// Zero-based class index within the scheme.
    pub fn index(&self) -> usize {
        (self.value - self.scheme.min_value()) as usize
    }
}

impl Ord for DamageLabel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value.cmp(&other.value)
    }
}

impl PartialOrd for DamageLabel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for DamageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}
