//! Sampling geophysical fields at building centroids: gridded rasters
//! (SAR amplitudes, damage proxy, VS30) and iso-level contour sets
//! (intensity, PGA, PGV, PSA).

mod catalog;
mod contour;
pub mod io;
mod raster;

pub use catalog::{assemble_metadata, FieldCatalog};
pub use contour::{interpolate_contours, ContourLevel, ContourSet};
pub use raster::{sample_raster, Crs, RasterGrid, Sampling};

use thiserror::Error;

use crate::dataset::SourceKind;
use crate::geo::GeoError;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("point outside the extent of {field}")]
    OutOfExtent { field: String },
    #[error("no valid cells around the point in {field}")]
    NoData { field: String },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("contour set {0} has no levels")]
    EmptyContours(String),
    #[error("invalid contours: {0}")]
    InvalidContours(String),
    #[error("schema feature {name} ({kind:?}) is not in the field catalog")]
    MissingField { name: String, kind: SourceKind },
    #[error("field name {0} already in the catalog")]
    DuplicateName(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
