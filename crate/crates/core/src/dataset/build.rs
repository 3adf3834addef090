use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    crop_building_image, pick_scene, DamageLabel, DatasetError, ImageTile, LabelScheme,
    MetadataSchema, MetadataVector, Scene,
};
use crate::fields::{assemble_metadata, FieldCatalog};
use crate::geo::{
    centroid, map_ground_truth, Footprint, FootprintId, GeoPoint, Rejection, SpatialIndex, UtmZone,
};

/// One labelled building with its image tile and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingRecord {
    pub id: FootprintId,
    pub footprint: Footprint,
    pub centroid: GeoPoint,
    pub tile: ImageTile,
    pub metadata: MetadataVector,
    pub label: DamageLabel,
    pub region: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct BuildOptions {
    pub zone: UtmZone,
    pub tile_size: usize,
    /// Fractional growth of the footprint bounding box before cropping.
    pub margin: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            zone: UtmZone::default(),
            tile_size: 64,
            margin: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedBuilding {
    pub id: FootprintId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildReport {
    pub rejected_points: Vec<Rejection>,
    pub dropped: Vec<DroppedBuilding>,
}

/// Ground-truth join, centroid, metadata sampling and tile cropping, in
/// that order. Output is sorted by footprint id.
pub fn build_dataset(
    footprints: Vec<Footprint>,
    ground_truth: &[(GeoPoint, i64)],
    catalog: &FieldCatalog,
    scenes: &[Scene],
    schema: &MetadataSchema,
    scheme: LabelScheme,
    opts: &BuildOptions,
) -> Result<(Vec<BuildingRecord>, BuildReport), DatasetError> {
    catalog.check_schema(schema)?;
    for s in scenes {
        s.validate()?;
    }
    let labelled: Vec<(GeoPoint, DamageLabel)> = ground_truth
        .iter()
        .map(|(p, v)| Ok((*p, scheme.label(*v)?)))
        .collect::<Result<_, DatasetError>>()?;
    let index = SpatialIndex::build(footprints, opts.zone)?;
    let mapping = map_ground_truth(&index, &labelled);
    if mapping.assigned.is_empty() {
        return Err(DatasetError::Empty);
    }

    let outcomes: Vec<Result<BuildingRecord, DroppedBuilding>> = mapping
        .assigned
        .par_iter()
        .map(|a| {
            let fp = index.get(&a.footprint).expect("assigned footprint is indexed");
            let drop = |reason: String| DroppedBuilding {
                id: fp.id.clone(),
                reason,
            };
            let c = centroid(fp, &opts.zone).map_err(|e| drop(e.to_string()))?;
            let metadata = assemble_metadata(catalog, schema, c).map_err(|e| drop(e.to_string()))?;
            let scene = pick_scene(scenes, fp, opts.margin)
                .ok_or_else(|| drop("no imagery covers the footprint".into()))?;
            let tile = crop_building_image(scene, fp, opts.tile_size, opts.margin)
                .map_err(|e| drop(e.to_string()))?;
            Ok(BuildingRecord {
                id: fp.id.clone(),
                footprint: fp.clone(),
                centroid: c,
                tile,
                metadata,
                label: a.label,
                region: fp.region.clone(),
            })
        })
        .collect();

    let mut records = Vec::new();
    let mut dropped = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(d) => {
                log::warn!("dropping building {}: {}", d.id, d.reason);
                dropped.push(d);
            }
        }
    }
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok((
        records,
        BuildReport {
            rejected_points: mapping.rejected,
            dropped,
        },
    ))
}
