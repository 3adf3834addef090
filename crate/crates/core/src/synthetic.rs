//! Seeded synthetic fixtures: a small town of rectangular buildings with
//! ground-truth points, imagery and a field catalog for any schema.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::path::Path;

use crate::dataset::{io::write_scene, DatasetError, LabelScheme, MetadataSchema, Scene, SourceKind};
use crate::fields::io::{write_binary_grid, write_contours};
use crate::fields::{ContourLevel, ContourSet, Crs, FieldCatalog, RasterGrid};
use crate::geo::io::{write_footprints, write_ground_truth};
use crate::geo::{Footprint, GeoPoint, UtmZone};

pub const LON0: f64 = 37.0;
pub const LAT0: f64 = 37.0;
/// Building pitch in degrees.
pub const PITCH: f64 = 0.001;

#[derive(Debug, Clone)]
pub struct Town {
    pub footprints: Vec<Footprint>,
    pub ground_truth: Vec<(GeoPoint, i64)>,
    pub catalog: FieldCatalog,
    pub scenes: Vec<Scene>,
    pub schema: MetadataSchema,
    pub scheme: LabelScheme,
}

fn pt(lon: f64, lat: f64) -> GeoPoint {
    GeoPoint { lon, lat }
}

/// Extent (west, south, east, north) of a town with `n` buildings.
pub fn town_extent(n: usize) -> (f64, f64, f64, f64) {
    let side = (n as f64).sqrt().ceil().max(1.0);
    (
        LON0 - PITCH,
        LAT0 - PITCH,
        LON0 + (side + 1.0) * PITCH,
        LAT0 + (side + 1.0) * PITCH,
    )
}

/// `n` buildings on a jittered grid, one interior ground-truth point each,
/// plus a few stray points outside every building.
pub fn town(n: usize, schema: MetadataSchema, scheme: LabelScheme, seed: u64) -> Town {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = (n as f64).sqrt().ceil() as usize;
    let mut footprints = Vec::with_capacity(n);
    let mut ground_truth = Vec::new();
    for i in 0..n {
        let (r, c) = (i / side, i % side);
        let cx = LON0 + (c as f64 + 0.5) * PITCH + rng.gen_range(-0.1..0.1) * PITCH;
        let cy = LAT0 + (r as f64 + 0.5) * PITCH + rng.gen_range(-0.1..0.1) * PITCH;
        let hw = rng.gen_range(0.1..0.3) * PITCH;
        let hh = rng.gen_range(0.1..0.3) * PITCH;
        let skew = rng.gen_range(-0.3..0.3) * hw;
        let ring = vec![
            pt(cx - hw, cy - hh),
            pt(cx + hw, cy - hh),
            pt(cx + hw + skew, cy + hh),
            pt(cx - hw + skew, cy + hh),
        ];
        let region = Some(if c < side / 2 { "WEST" } else { "EAST" }.to_string());
        footprints.push(Footprint::new(i as u64 + 1, ring, region).expect("valid synthetic footprint"));
        let label = scheme.min_value() as i64 + rng.gen_range(0..scheme.n_classes() as i64);
        ground_truth.push((pt(cx + skew / 2.0, cy), label));
    }
    for _ in 0..n.div_ceil(10) {
        let (w, s, _, _) = town_extent(n);
        // Corners of the grid cells lie between buildings.
        let r = rng.gen_range(0..=side);
        let c = rng.gen_range(0..=side);
        ground_truth.push((
            pt(w + PITCH + c as f64 * PITCH, s + PITCH + r as f64 * PITCH),
            scheme.min_value() as i64,
        ));
    }
    let extent = town_extent(n);
    Town {
        footprints,
        ground_truth,
        catalog: catalog_for(&schema, extent, seed ^ 0x5eed),
        scenes: vec![scene(extent, 2e-5, seed ^ 0xface)],
        schema,
        scheme,
    }
}

/// Writes the town as raw build inputs under `dir`: `footprints.geojson`,
/// `ground_truth.csv`, `fields/` (binary grids and contour GeoJSON) and
/// `scenes/`.
pub fn write_raw(town: &Town, dir: &Path) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir.join("fields"))?;
    std::fs::create_dir_all(dir.join("scenes"))?;
    write_footprints(&dir.join("footprints.geojson"), &town.footprints)?;
    write_ground_truth(&dir.join("ground_truth.csv"), &town.ground_truth)?;
    for g in town.catalog.rasters() {
        write_binary_grid(&dir.join("fields").join(format!("{}.grid.json", g.name)), g)?;
    }
    for c in town.catalog.contour_sets() {
        write_contours(&dir.join("fields").join(format!("{}.contours.geojson", c.name)), c)?;
    }
    for s in &town.scenes {
        write_scene(&dir.join("scenes").join(format!("{}.png", s.name)), s)?;
    }
    Ok(())
}

/// Textured scene covering `extent` at `res` degrees per pixel.
pub fn scene(extent: (f64, f64, f64, f64), res: f64, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, s, e, n) = extent;
    let width = ((e - w) / res).ceil() as usize;
    let height = ((n - s) / res).ceil() as usize;
    let phase: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let mut rgb = Vec::with_capacity(width * height * 3);
    for r in 0..height {
        for c in 0..width {
            for (k, ph) in phase.iter().enumerate() {
                let v = 127.5
                    + 60.0 * ((c as f64 * 0.21 + ph * 6.0) * (k + 1) as f64).sin()
                    + 60.0 * ((r as f64 * 0.17 + ph * 3.0) * (3 - k) as f64).cos();
                rgb.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Scene {
        name: "town".into(),
        west: w,
        north: n,
        pixel_width: res,
        pixel_height: res,
        width,
        height,
        rgb,
    }
}

/// A smooth raster or a family of meridian contours for every schema
/// feature, covering `extent`.
pub fn catalog_for(schema: &MetadataSchema, extent: (f64, f64, f64, f64), seed: u64) -> FieldCatalog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, s, e, n) = extent;
    let mut cat = FieldCatalog::new();
    for f in &schema.features {
        match f.source {
            SourceKind::Raster => {
                let cell = PITCH / 2.0;
                let cols = ((e - w) / cell).ceil() as usize + 2;
                let rows = ((n - s) / cell).ceil() as usize + 2;
                let (a, b, c): (f64, f64, f64) = (rng.gen_range(-5.0..5.0), rng.gen(), rng.gen());
                let values = (0..rows * cols)
                    .map(|i| {
                        let (r, col) = ((i / cols) as f64, (i % cols) as f64);
                        a + (col * 0.3 + b * 6.0).sin() * 2.0 + (r * 0.2 + c * 6.0).cos()
                    })
                    .collect();
                let grid = RasterGrid::new(
                    f.name.clone(),
                    Crs::Geographic,
                    (w - cell, n + cell),
                    cell,
                    rows,
                    cols,
                    -9999.0,
                    values,
                )
                .expect("valid synthetic grid");
                cat.add_raster(grid).expect("unique names");
            }
            SourceKind::Contour => {
                let n_levels = rng.gen_range(3..7);
                let base: f64 = rng.gen_range(0.0..5.0);
                let step: f64 = rng.gen_range(0.2..1.5);
                let levels = (0..n_levels)
                    .map(|k| {
                        let lon = w + (e - w) * (k as f64 + 0.5) / n_levels as f64;
                        ContourLevel {
                            value: base + step * k as f64,
                            polylines: vec![vec![pt(lon, s - 0.01), pt(lon, n + 0.01)]],
                        }
                    })
                    .collect();
                let cs = ContourSet::new(
                    f.name.clone(),
                    f.event_rank.unwrap_or(1),
                    levels,
                    UtmZone::default(),
                )
                .expect("valid synthetic contours");
                cat.add_contours(cs).expect("unique names");
            }
        }
    }
    cat
}

/// Which modality carries the label in [`samples`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    /// Labels are arbitrary; nothing predicts them.
    None,
    /// The label is the bucket of metadata feature 0 on a uniform grid over
    /// [-1.5, 1.5); images are pure noise.
    Metadata,
    /// Each class adds its own fixed template to the image; metadata is noise.
    Imagery,
}

/// Already-normalised samples with balanced labels (`i % k`), standard
/// normal-ish noise images of side `image_size` and `d` metadata features.
pub fn samples(n: usize, k: usize, d: usize, image_size: usize, signal: Signal, seed: u64) -> Vec<crate::dataset::Sample> {
    use crate::dataset::{MetadataVector, Sample};
    let px = 3 * image_size * image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trng = ChaCha8Rng::seed_from_u64(0x007e_3a11);
    let templates: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..px).map(|_| if trng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect())
        .collect();
    let noise = |rng: &mut ChaCha8Rng| (rng.gen::<f64>() + rng.gen::<f64>() + rng.gen::<f64>() - 1.5) * 2.0;
    (0..n)
        .map(|i| {
            let mut label = i % k;
            let mut values: Vec<f64> = (0..d).map(|_| noise(&mut rng)).collect();
            if signal == Signal::Metadata {
                let x: f64 = rng.gen_range(-1.5..1.5);
                values[0] = x;
                label = (((x + 1.5) / 3.0 * k as f64) as usize).min(k - 1);
            }
            let mut image: Vec<f64> = (0..px).map(|_| noise(&mut rng)).collect();
            if signal == Signal::Imagery {
                for (v, t) in image.iter_mut().zip(&templates[label]) {
                    *v = 0.6 * *v + t;
                }
            }
            Sample {
                image,
                image_size,
                metadata: MetadataVector::unmasked(values),
                label,
            }
        })
        .collect()
}
