use std::collections::BTreeMap;

use super::{interpolate_contours, sample_raster, ContourSet, FieldError, RasterGrid};
use crate::dataset::{MetadataSchema, MetadataVector, SourceKind};
use crate::geo::GeoPoint;

/// Named rasters and contour sets; names are unique across both kinds.
#[derive(Debug, Clone, Default)]
pub struct FieldCatalog {
    rasters: BTreeMap<String, RasterGrid>,
    contours: BTreeMap<String, ContourSet>,
}

impl FieldCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_raster(&mut self, grid: RasterGrid) -> Result<(), FieldError> {
        grid.validate()?;
        if self.contains(&grid.name) {
            return Err(FieldError::DuplicateName(grid.name));
        }
        self.rasters.insert(grid.name.clone(), grid);
        Ok(())
    }

    pub fn add_contours(&mut self, cs: ContourSet) -> Result<(), FieldError> {
        if self.contains(&cs.name) {
            return Err(FieldError::DuplicateName(cs.name));
        }
        self.contours.insert(cs.name.clone(), cs);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.rasters.contains_key(name) || self.contours.contains_key(name)
    }

    pub fn raster(&self, name: &str) -> Option<&RasterGrid> {
        self.rasters.get(name)
    }

    pub fn contour_set(&self, name: &str) -> Option<&ContourSet> {
        self.contours.get(name)
    }

    pub fn rasters(&self) -> impl Iterator<Item = &RasterGrid> {
        self.rasters.values()
    }

    pub fn contour_sets(&self) -> impl Iterator<Item = &ContourSet> {
        self.contours.values()
    }

    /// Checks that every schema feature resolves to a field of the right kind.
    pub fn check_schema(&self, schema: &MetadataSchema) -> Result<(), FieldError> {
        for f in &schema.features {
            let found = match f.source {
                SourceKind::Raster => self.rasters.contains_key(&f.name),
                SourceKind::Contour => self.contours.contains_key(&f.name),
            };
            if !found {
                return Err(FieldError::MissingField {
                    name: f.name.clone(),
                    kind: f.source,
                });
            }
        }
        Ok(())
    }

    pub fn sample(&self, name: &str, source: SourceKind, p: GeoPoint) -> Result<f64, FieldError> {
        let missing = || FieldError::MissingField {
            name: name.to_string(),
            kind: source,
        };
        match source {
            SourceKind::Raster => sample_raster(self.rasters.get(name).ok_or_else(missing)?, p),
            SourceKind::Contour => {
                interpolate_contours(self.contours.get(name).ok_or_else(missing)?, p)
            }
        }
    }
}

/// Samples every schema feature at a building centroid. A feature whose
/// sampling fails is masked (value 0) instead of failing the building.
pub fn assemble_metadata(
    catalog: &FieldCatalog,
    schema: &MetadataSchema,
    centroid: GeoPoint,
) -> Result<MetadataVector, FieldError> {
    catalog.check_schema(schema)?;
    let mut values = Vec::with_capacity(schema.len());
    let mut mask = Vec::with_capacity(schema.len());
    for f in &schema.features {
        match catalog.sample(&f.name, f.source, centroid) {
            Ok(v) => {
                values.push(v);
                mask.push(false);
            }
            Err(e) => {
                log::debug!("masking {} at ({}, {}): {e}", f.name, centroid.lon, centroid.lat);
                values.push(0.0);
                mask.push(true);
            }
        }
    }
    Ok(MetadataVector { values, mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::MetadataFeature;
    use crate::fields::Crs;

    fn const_grid(name: &str, v: f64, lon0: f64) -> RasterGrid {
        RasterGrid::new(name, Crs::Geographic, (lon0, 38.0), 0.5, 4, 4, -1.0, vec![v; 16]).unwrap()
    }

    #[test]
    fn single_constant_feature() {
        let mut cat = FieldCatalog::new();
        cat.add_raster(const_grid("VS30", 760.0, 36.0)).unwrap();
        let schema = MetadataSchema::new(vec![MetadataFeature::raster("VS30", "m/s")]).unwrap();
        let v = assemble_metadata(&cat, &schema, GeoPoint::new(37.0, 37.0).unwrap()).unwrap();
        assert_eq!(v.values, [760.0]);
        assert_eq!(v.mask, [false]);
    }

    #[test]
    fn out_of_extent_feature_is_masked() {
        let mut cat = FieldCatalog::new();
        cat.add_raster(const_grid("SAR-VV", 1.0, 36.0)).unwrap();
        cat.add_raster(const_grid("SAR-VH", 2.0, 40.0)).unwrap();
        let schema = MetadataSchema::new(vec![
            MetadataFeature::raster("SAR-VV", "dB"),
            MetadataFeature::raster("SAR-VH", "dB"),
        ])
        .unwrap();
        let v = assemble_metadata(&cat, &schema, GeoPoint::new(37.0, 37.0).unwrap()).unwrap();
        assert_eq!(v.values, [1.0, 0.0]);
        assert_eq!(v.mask, [false, true]);
    }

    #[test]
    fn missing_feature_is_a_configuration_error() {
        let cat = FieldCatalog::new();
        let schema = MetadataSchema::new(vec![MetadataFeature::raster("DPM", "")]).unwrap();
        assert!(matches!(
            assemble_metadata(&cat, &schema, GeoPoint::new(37.0, 37.0).unwrap()),
            Err(FieldError::MissingField { .. })
        ));
    }

    #[test]
    fn names_are_unique_across_kinds() {
        let mut cat = FieldCatalog::new();
        cat.add_raster(const_grid("PGA", 1.0, 36.0)).unwrap();
        let cs = ContourSet::new(
            "PGA",
            1,
            vec![crate::fields::ContourLevel {
                value: 1.0,
                polylines: vec![vec![
                    GeoPoint::new(37.0, 37.0).unwrap(),
                    GeoPoint::new(37.1, 37.0).unwrap(),
                ]],
            }],
            Default::default(),
        )
        .unwrap();
        assert!(matches!(cat.add_contours(cs), Err(FieldError::DuplicateName(_))));
    }
}
