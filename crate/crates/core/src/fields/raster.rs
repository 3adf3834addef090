use serde::{Deserialize, Serialize};

use super::FieldError;
use crate::geo::{GeoPoint, UtmZone};

/// Coordinate system of a grid's origin and cell size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Crs {
    /// Degrees, WGS84.
    Geographic,
    /// Metres in a UTM zone.
    Utm(UtmZone),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    #[default]
    Bilinear,
    Nearest,
}

/// Single-band north-up grid. `origin_x`/`origin_y` locate the outer
/// (north-west) corner of cell (0, 0); rows advance southwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterGrid {
    pub name: String,
    pub crs: Crs,
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub nodata: f64,
    #[serde(skip)]
    pub values: Vec<f64>,
    #[serde(default)]
    pub sampling: Sampling,
}

impl RasterGrid {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        crs: Crs,
        origin: (f64, f64),
        cell_size: f64,
        n_rows: usize,
        n_cols: usize,
        nodata: f64,
        values: Vec<f64>,
    ) -> Result<Self, FieldError> {
        let g = RasterGrid {
            name: name.into(),
            crs,
            origin_x: origin.0,
            origin_y: origin.1,
            cell_size,
            n_rows,
            n_cols,
            nodata,
            values,
            sampling: Sampling::Bilinear,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(FieldError::InvalidGrid(format!("{}: empty grid", self.name)));
        }
        if !self.cell_size.is_finite() || self.cell_size <= 0.0 {
            return Err(FieldError::InvalidGrid(format!(
                "{}: cell size must be positive",
                self.name
            )));
        }
        if self.values.len() != self.n_rows * self.n_cols {
            return Err(FieldError::InvalidGrid(format!(
                "{}: {} values for {}x{} cells",
                self.name,
                self.values.len(),
                self.n_rows,
                self.n_cols
            )));
        }
        Ok(())
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols + col]
    }

    fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata || v.is_nan()
    }

    /// Coordinates of `p` in the grid CRS.
    pub fn to_grid_crs(&self, p: GeoPoint) -> Result<(f64, f64), FieldError> {
        match self.crs {
            Crs::Geographic => Ok((p.lon, p.lat)),
            Crs::Utm(zone) => {
                let q = zone.project(p)?;
                Ok((q.easting, q.northing))
            }
        }
    }

    /// Continuous (row, col) position where integer values are cell centres.
    pub fn fractional_index(&self, x: f64, y: f64) -> Result<(f64, f64), FieldError> {
        let col = (x - self.origin_x) / self.cell_size;
        let row = (self.origin_y - y) / self.cell_size;
        if !(0.0..=self.n_cols as f64).contains(&col) || !(0.0..=self.n_rows as f64).contains(&row) {
            return Err(FieldError::OutOfExtent {
                field: self.name.clone(),
            });
        }
        Ok((row - 0.5, col - 0.5))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.cell_size,
            self.origin_y - (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Samples at projected/native coordinates.
    pub fn sample_xy(&self, x: f64, y: f64) -> Result<f64, FieldError> {
        let (r, c) = self.fractional_index(x, y)?;
        // The half-cell band outside the outermost centres clamps to the edge.
        let r = snap(r.clamp(0.0, (self.n_rows - 1) as f64));
        let c = snap(c.clamp(0.0, (self.n_cols - 1) as f64));
        if self.sampling == Sampling::Nearest {
            let v = self.value(r.round() as usize, c.round() as usize);
            return if self.is_nodata(v) {
                Err(FieldError::NoData {
                    field: self.name.clone(),
                })
            } else {
                Ok(v)
            };
        }
        let r0 = r.floor() as usize;
        let c0 = c.floor() as usize;
        let r1 = (r0 + 1).min(self.n_rows - 1);
        let c1 = (c0 + 1).min(self.n_cols - 1);
        let fr = r - r0 as f64;
        let fc = c - c0 as f64;
        let support = [
            (r0, c0, (1.0 - fr) * (1.0 - fc)),
            (r0, c1, (1.0 - fr) * fc),
            (r1, c0, fr * (1.0 - fc)),
            (r1, c1, fr * fc),
        ];
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (rr, cc, w) in support {
            let v = self.value(rr, cc);
            if w > 0.0 && !self.is_nodata(v) {
                acc += w * v;
                wsum += w;
            }
        }
        if wsum == 0.0 {
            // Weight may sit entirely on nodata cells, or on one valid cell
            // with zero weight (point exactly on a nodata centre).
            return Err(FieldError::NoData {
                field: self.name.clone(),
            });
        }
        Ok(acc / wsum)
    }
}

/// Rounds positions within float noise of a cell centre onto it, so centres
/// reproduce stored values exactly.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Bilinear (or nearest) sample at a WGS84 point, reprojected into the grid CRS.
pub fn sample_raster(grid: &RasterGrid, p: GeoPoint) -> Result<f64, FieldError> {
    let (x, y) = grid.to_grid_crs(p)?;
    grid.sample_xy(x, y)
}
