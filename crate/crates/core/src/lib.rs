//! Building-level post-earthquake damage assessment toolkit.

pub mod attribution;
pub mod autodiff;
pub mod dataset;
pub mod experiment;
pub mod fields;
pub mod geo;
pub mod metrics;
pub mod model;
pub mod synthetic;
pub mod training;

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
