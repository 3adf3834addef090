//! Coordinates, footprint geometry, spatial indexing and the ground-truth
//! to footprint join.

mod footprint;
mod index;
pub mod io;
mod projection;

pub use footprint::{
    centroid, contains, ring_centroid, ring_contains, ring_distance_2, segment_closest,
    signed_area, Footprint, FootprintId, GeoPoint,
};
pub use index::{
    map_ground_truth, Assignment, GroundTruthMapping, Nearest, RejectReason, Rejection,
    SpatialIndex,
};
pub use projection::{project, unproject, Hemisphere, ProjPoint, UtmZone};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("coordinate out of range: lon {lon}, lat {lat}")]
    InvalidCoordinate { lon: f64, lat: f64 },
    #[error("latitude {lat} outside the UTM domain (|lat| <= 84)")]
    OutOfDomain { lat: f64 },
    #[error("UTM zone {0} outside 1..=60")]
    InvalidZone(u8),
    #[error("footprint {0} has zero area")]
    Degenerate(String),
    #[error("footprint {id} is invalid: {reason}")]
    InvalidFootprint { id: String, reason: String },
    #[error("duplicate footprint id {0}")]
    DuplicateId(String),
    #[error("malformed input: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
