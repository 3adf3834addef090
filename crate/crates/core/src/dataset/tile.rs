use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::geo::{ring_contains, Footprint};

/// Cropped RGB building image with a per-pixel footprint mask. Pixels are
/// stored 8-bit; [`ImageTile::to_unit`] gives unit-interval reals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageTile {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub rgb: Vec<u8>,
    pub footprint_mask: Vec<bool>,
}

impl ImageTile {
    pub fn new(
        width: usize,
        height: usize,
        rgb: Vec<u8>,
        footprint_mask: Vec<bool>,
    ) -> Result<Self, DatasetError> {
        if width == 0 || height == 0 {
            return Err(DatasetError::Image("tile dimensions must be positive".into()));
        }
        if rgb.len() != width * height * 3 || footprint_mask.len() != width * height {
            return Err(DatasetError::Image(format!(
                "buffer sizes do not match a {width}x{height} tile"
            )));
        }
        Ok(ImageTile {
            width,
            height,
            rgb,
            footprint_mask,
        })
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Channel-major `[3, height, width]` values in [0, 1].
    pub fn to_unit(&self) -> Vec<f64> {
        let hw = self.width * self.height;
        let mut out = vec![0.0; 3 * hw];
        for (p, px) in self.rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * hw + p] = f64::from(px[c]) / 255.0;
            }
        }
        out
    }
}

/// Georeferenced north-up RGB image in geographic coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub name: String,
    /// Longitude of the western edge of column 0.
    pub west: f64,
    /// Latitude of the northern edge of row 0.
    pub north: f64,
    /// Degrees per pixel.
    pub pixel_width: f64,
    pub pixel_height: f64,
    pub width: usize,
    pub height: usize,
    #[serde(skip)]
    pub rgb: Vec<u8>,
}

impl Scene {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.width == 0 || self.height == 0 || self.rgb.len() != self.width * self.height * 3 {
            return Err(DatasetError::Image(format!("scene {} has inconsistent size", self.name)));
        }
        if !(self.pixel_width > 0.0 && self.pixel_height > 0.0) {
            return Err(DatasetError::Image(format!("scene {} pixel size must be positive", self.name)));
        }
        Ok(())
    }

    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.west,
            self.north - self.height as f64 * self.pixel_height,
            self.west + self.width as f64 * self.pixel_width,
            self.north,
        )
    }

    fn channel(&self, row: usize, col: usize, c: usize) -> f64 {
        f64::from(self.rgb[(row * self.width + col) * 3 + c])
    }

    /// Bilinear sample at a continuous pixel position (integers are pixel
    /// centres), clamped at the scene border.
    fn sample(&self, py: f64, px: f64) -> [f64; 3] {
        let py = py.clamp(0.0, (self.height - 1) as f64);
        let px = px.clamp(0.0, (self.width - 1) as f64);
        let r0 = py.floor() as usize;
        let c0 = px.floor() as usize;
        let r1 = (r0 + 1).min(self.height - 1);
        let c1 = (c0 + 1).min(self.width - 1);
        let fr = py - r0 as f64;
        let fc = px - c0 as f64;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = self.channel(r0, c0, c) * (1.0 - fc) + self.channel(r0, c1, c) * fc;
            let bottom = self.channel(r1, c0, c) * (1.0 - fc) + self.channel(r1, c1, c) * fc;
            *o = top * (1.0 - fr) + bottom * fr;
        }
        out
    }
}

fn overlaps(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> bool {
    a.0 < b.2 && b.0 < a.2 && a.1 < b.3 && b.1 < a.3
}

fn inside(inner: (f64, f64, f64, f64), outer: (f64, f64, f64, f64)) -> bool {
    inner.0 >= outer.0 && inner.1 >= outer.1 && inner.2 <= outer.2 && inner.3 <= outer.3
}

/// Footprint bounding box grown by `margin` (fraction of each side length,
/// split evenly between the two sides).
pub fn crop_window(fp: &Footprint, margin: f64) -> (f64, f64, f64, f64) {
    let (x0, y0, x1, y1) = fp.bbox();
    let mx = (x1 - x0) * margin / 2.0;
    let my = (y1 - y0) * margin / 2.0;
    (x0 - mx, y0 - my, x1 + mx, y1 + my)
}

/// Crops the footprint's expanded bounding box and resamples it bilinearly
/// to `out_size` x `out_size`. Exterior pixels are kept; the footprint is
/// recorded in the mask.
pub fn crop_building_image(
    scene: &Scene,
    fp: &Footprint,
    out_size: usize,
    margin: f64,
) -> Result<ImageTile, DatasetError> {
    if out_size == 0 {
        return Err(DatasetError::Image("out_size must be positive".into()));
    }
    if !overlaps(fp.bbox(), scene.extent()) {
        return Err(DatasetError::NoCoverage {
            id: fp.id.to_string(),
        });
    }
    let (x0, y0, x1, y1) = crop_window(fp, margin);
    let dx = (x1 - x0) / out_size as f64;
    let dy = (y1 - y0) / out_size as f64;
    let ring = fp.ring_xy();
    let mut rgb = Vec::with_capacity(out_size * out_size * 3);
    let mut mask = Vec::with_capacity(out_size * out_size);
    for i in 0..out_size {
        let lat = y1 - (i as f64 + 0.5) * dy;
        let py = (scene.north - lat) / scene.pixel_height - 0.5;
        for j in 0..out_size {
            let lon = x0 + (j as f64 + 0.5) * dx;
            let px = (lon - scene.west) / scene.pixel_width - 0.5;
            for v in scene.sample(py, px) {
                rgb.push(v.round().clamp(0.0, 255.0) as u8);
            }
            mask.push(ring_contains(&ring, [lon, lat]));
        }
    }
    ImageTile::new(out_size, out_size, rgb, mask)
}

/// First scene that contains the crop window, else the first that overlaps
/// the footprint.
pub fn pick_scene<'a>(scenes: &'a [Scene], fp: &Footprint, margin: f64) -> Option<&'a Scene> {
    let window = crop_window(fp, margin);
    scenes
        .iter()
        .find(|s| inside(window, s.extent()))
        .or_else(|| scenes.iter().find(|s| overlaps(fp.bbox(), s.extent())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;

    fn scene(w: usize, h: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> Scene {
        let mut rgb = Vec::new();
        for r in 0..h {
            for c in 0..w {
                rgb.extend_from_slice(&f(r, c));
            }
        }
        Scene {
            name: "s".into(),
            west: 37.0,
            north: 37.01,
            pixel_width: 1e-5,
            pixel_height: 1e-5,
            width: w,
            height: h,
            rgb,
        }
    }

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Footprint {
        let g = |x, y| GeoPoint::new(x, y).unwrap();
        Footprint::new("1", vec![g(x0, y0), g(x1, y0), g(x1, y1), g(x0, y1)], None).unwrap()
    }

    #[test]
    fn uniform_scene_gives_constant_tile() {
        let s = scene(100, 100, |_, _| [10, 200, 30]);
        let fp = rect(37.0002, 37.0095, 37.0004, 37.0097);
        let t = crop_building_image(&s, &fp, 16, 0.2).unwrap();
        assert!(t.rgb.chunks(3).all(|p| p == [10, 200, 30]));
        assert!(t.footprint_mask[8 * 16 + 8]);
        assert!(!t.footprint_mask[0]);
    }

    #[test]
    fn native_size_without_margin_copies_pixels() {
        let s = scene(50, 50, |r, c| [(r * 5) as u8, (c * 5) as u8, ((r + c) % 256) as u8]);
        // Columns 10..20, rows 5..15, aligned with pixel edges.
        let fp = rect(37.0 + 10.0 * 1e-5, 37.01 - 15.0 * 1e-5, 37.0 + 20.0 * 1e-5, 37.01 - 5.0 * 1e-5);
        let t = crop_building_image(&s, &fp, 10, 0.0).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                assert_eq!(t.pixel(i, j), [((5 + i) * 5) as u8, ((10 + j) * 5) as u8, ((15 + i + j) % 256) as u8]);
            }
        }
        assert!(t.footprint_mask.iter().all(|&m| m));
    }

    #[test]
    fn footprint_outside_scene_has_no_coverage() {
        let s = scene(10, 10, |_, _| [0, 0, 0]);
        let fp = rect(38.0, 38.0, 38.001, 38.001);
        assert!(matches!(
            crop_building_image(&s, &fp, 8, 0.2),
            Err(DatasetError::NoCoverage { .. })
        ));
    }

    #[test]
    fn unit_conversion_is_channel_major() {
        let t = ImageTile::new(2, 1, vec![255, 0, 0, 0, 0, 255], vec![true, false]).unwrap();
        assert_eq!(t.to_unit(), [1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }
}
