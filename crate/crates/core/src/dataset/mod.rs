//! Building records: labels, metadata schemas, image tiles, dataset
//! assembly, splits, class weights and normalisation.

mod build;
pub mod io;
mod label;
mod normalize;
mod schema;
mod split;
mod tile;

pub use build::{build_dataset, BuildOptions, BuildReport, BuildingRecord, DroppedBuilding};
pub use io::{dataset_hash, Dataset, Manifest};
pub use label::{DamageLabel, LabelScheme};
pub use normalize::{Normalizer, Sample};
pub use schema::{
    MetadataFeature, MetadataSchema, MetadataVector, SourceKind, SAR_FEATURES, SEISMIC_QUANTITIES,
};
pub use split::{
    class_weights, class_weights_from_counts, split_by_region, split_random, DatasetSplit,
    RegionSplit,
};
pub use tile::{crop_building_image, crop_window, pick_scene, ImageTile, Scene};

use thiserror::Error;

use crate::fields::FieldError;
use crate::geo::GeoError;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("label {value} is not valid in scheme {scheme:?}")]
    InvalidLabel { value: i64, scheme: LabelScheme },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("schema hash mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("no imagery covers footprint {id}")]
    NoCoverage { id: String },
    #[error("image error: {0}")]
    Image(String),
    #[error("no ground-truth point maps to a covered footprint")]
    Empty,
    #[error("class index {0} has no records; drop or merge it before weighting")]
    EmptyClass(usize),
    #[error("split fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("dataset has no fitted normaliser")]
    NotNormalized,
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
