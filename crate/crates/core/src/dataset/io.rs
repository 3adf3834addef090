//! On-disk dataset layout:
//!
//! ```text
//! <dir>/manifest.json       schema, label scheme, normaliser, split
//! <dir>/records.csv         id, region, label, lon, lat, one column per feature, mask
//! <dir>/footprints.geojson  building outlines
//! <dir>/tiles/<id>.png      8-bit RGB tile
//! <dir>/masks/<id>.png      1-bit footprint mask
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    BuildOptions, BuildingRecord, DatasetError, DatasetSplit, ImageTile, LabelScheme,
    MetadataSchema, MetadataVector, Normalizer, Sample, Scene,
};
use crate::geo::{io as geo_io, FootprintId, GeoPoint};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub schema: MetadataSchema,
    pub schema_hash: String,
    pub scheme: LabelScheme,
    pub build: BuildOptions,
    pub record_count: usize,
    pub normalizer: Option<Normalizer>,
    pub split: Option<DatasetSplit>,
}

/// Records plus everything needed to turn them into model inputs.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: MetadataSchema,
    pub scheme: LabelScheme,
    pub build: BuildOptions,
    pub records: Vec<BuildingRecord>,
    pub normalizer: Option<Normalizer>,
    pub split: Option<DatasetSplit>,
}

impl Dataset {
    /// Splits the records and fits the normaliser on the train side.
    pub fn finalize(
        schema: MetadataSchema,
        scheme: LabelScheme,
        build: BuildOptions,
        mut records: Vec<BuildingRecord>,
        fraction: f64,
        seed: u64,
    ) -> Result<Self, DatasetError> {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        let items: Vec<(FootprintId, usize)> =
            records.iter().map(|r| (r.id.clone(), r.label.index())).collect();
        let split = super::split_random(&items, scheme.n_classes(), fraction, seed)?;
        let mut ds = Dataset {
            schema,
            scheme,
            build,
            records,
            normalizer: None,
            split: Some(split),
        };
        ds.refit_normalizer()?;
        Ok(ds)
    }

    pub fn refit_normalizer(&mut self) -> Result<(), DatasetError> {
        let train = self.train_records();
        let train: Vec<BuildingRecord> = train.into_iter().cloned().collect();
        self.normalizer = Some(Normalizer::fit(&train, &self.schema.hash())?);
        Ok(())
    }

    pub fn schema_hash(&self) -> String {
        self.schema.hash()
    }

    pub fn record(&self, id: &FootprintId) -> Option<&BuildingRecord> {
        self.records
            .binary_search_by(|r| r.id.cmp(id))
            .ok()
            .map(|i| &self.records[i])
    }

    fn select(&self, ids: &[FootprintId]) -> Vec<&BuildingRecord> {
        ids.iter().filter_map(|id| self.record(id)).collect()
    }

    pub fn train_records(&self) -> Vec<&BuildingRecord> {
        match &self.split {
            Some(s) => self.select(&s.train),
            None => self.records.iter().collect(),
        }
    }

    pub fn test_records(&self) -> Vec<&BuildingRecord> {
        match &self.split {
            Some(s) => self.select(&s.test),
            None => Vec::new(),
        }
    }

    pub fn normalizer(&self) -> Result<&Normalizer, DatasetError> {
        self.normalizer.as_ref().ok_or(DatasetError::NotNormalized)
    }

    pub fn samples<'a>(
        &self,
        records: impl IntoIterator<Item = &'a BuildingRecord>,
    ) -> Result<Vec<Sample>, DatasetError> {
        let n = self.normalizer()?;
        records.into_iter().map(|r| n.apply(r)).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir.join("tiles"))?;
        fs::create_dir_all(dir.join("masks"))?;
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            schema: self.schema.clone(),
            schema_hash: self.schema.hash(),
            scheme: self.scheme,
            build: self.build.clone(),
            record_count: self.records.len(),
            normalizer: self.normalizer.clone(),
            split: self.split.clone(),
        };
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).map_err(|e| DatasetError::Format(e.to_string()))?,
        )?;

        let mut w = csv::Writer::from_path(dir.join("records.csv")).map_err(csv_err)?;
        let mut header = vec!["id".to_string(), "region".into(), "label".into(), "lon".into(), "lat".into()];
        header.extend(self.schema.features.iter().map(|f| f.name.clone()));
        header.push("mask".into());
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![
                r.id.0.clone(),
                r.region.clone().unwrap_or_default(),
                r.label.value.to_string(),
                r.centroid.lon.to_string(),
                r.centroid.lat.to_string(),
            ];
            row.extend(r.metadata.values.iter().map(|v| v.to_string()));
            row.push(r.metadata.mask.iter().map(|&m| if m { '1' } else { '0' }).collect());
            w.write_record(&row).map_err(csv_err)?;
            write_rgb_png(&dir.join("tiles").join(format!("{}.png", r.id)), &r.tile)?;
            write_mask_png(&dir.join("masks").join(format!("{}.png", r.id)), &r.tile)?;
        }
        w.flush()?;
        let fps: Vec<_> = self.records.iter().map(|r| r.footprint.clone()).collect();
        geo_io::write_footprints(&dir.join("footprints.geojson"), &fps)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| DatasetError::Format(format!("manifest.json: {e}")))?;
        if manifest.schema_hash != manifest.schema.hash() {
            return Err(DatasetError::SchemaMismatch {
                expected: manifest.schema.hash(),
                found: manifest.schema_hash,
            });
        }
        let footprints: HashMap<FootprintId, _> = geo_io::read_footprints(&dir.join("footprints.geojson"))?
            .into_iter()
            .map(|f| (f.id.clone(), f))
            .collect();
        let d = manifest.schema.len();
        let mut rdr = csv::Reader::from_path(dir.join("records.csv")).map_err(csv_err)?;
        let mut records = Vec::with_capacity(manifest.record_count);
        for row in rdr.records() {
            let row = row.map_err(csv_err)?;
            if row.len() != 6 + d {
                return Err(DatasetError::Format(format!("records.csv row has {} columns", row.len())));
            }
            let num = |i: usize| -> Result<f64, DatasetError> {
                row[i].parse().map_err(|_| DatasetError::Format(format!("bad number {:?}", &row[i])))
            };
            let id = FootprintId(row[0].to_string());
            let region = if row[1].is_empty() { None } else { Some(row[1].to_string()) };
            let label = manifest.scheme.label(
                row[2].parse().map_err(|_| DatasetError::Format(format!("bad label {:?}", &row[2])))?,
            )?;
            let centroid = GeoPoint::new(num(3)?, num(4)?)?;
            let values = (0..d).map(|j| num(5 + j)).collect::<Result<Vec<_>, _>>()?;
            let mask: Vec<bool> = row[5 + d].chars().map(|c| c == '1').collect();
            let metadata = MetadataVector::new(values, mask)?;
            let footprint = footprints
                .get(&id)
                .cloned()
                .ok_or_else(|| DatasetError::Format(format!("no footprint for record {id}")))?;
            let tile = read_tile(dir, &id)?;
            records.push(BuildingRecord {
                id,
                footprint,
                centroid,
                tile,
                metadata,
                label,
                region,
            });
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Dataset {
            schema: manifest.schema,
            scheme: manifest.scheme,
            build: manifest.build,
            records,
            normalizer: manifest.normalizer,
            split: manifest.split,
        })
    }
}

/// Digest over the manifest, records table and footprints of a saved dataset.
pub fn dataset_hash(dir: &Path) -> Result<String, DatasetError> {
    let mut h = Sha256::new();
    for f in ["manifest.json", "records.csv", "footprints.geojson"] {
        h.update(fs::read(dir.join(f))?);
    }
    Ok(crate::hex(&h.finalize()))
}

fn csv_err(e: csv::Error) -> DatasetError {
    DatasetError::Format(e.to_string())
}

fn png_err(e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Image(e.to_string())
}

pub fn write_rgb_png(path: &Path, tile: &ImageTile) -> Result<(), DatasetError> {
    let w = BufWriter::new(fs::File::create(path)?);
    let mut enc = png::Encoder::new(w, tile.width as u32, tile.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header().map_err(png_err)?.write_image_data(&tile.rgb).map_err(png_err)?;
    Ok(())
}

pub fn write_mask_png(path: &Path, tile: &ImageTile) -> Result<(), DatasetError> {
    let stride = tile.width.div_ceil(8);
    let mut packed = vec![0u8; stride * tile.height];
    for r in 0..tile.height {
        for c in 0..tile.width {
            if tile.footprint_mask[r * tile.width + c] {
                packed[r * stride + c / 8] |= 0x80 >> (c % 8);
            }
        }
    }
    let w = BufWriter::new(fs::File::create(path)?);
    let mut enc = png::Encoder::new(w, tile.width as u32, tile.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::One);
    enc.write_header().map_err(png_err)?.write_image_data(&packed).map_err(png_err)?;
    Ok(())
}

/// Decodes a PNG to (width, height, colour type, raw unpacked bytes).
fn decode_png(path: &Path) -> Result<(usize, usize, png::ColorType, png::BitDepth, Vec<u8>), DatasetError> {
    let dec = png::Decoder::new(fs::File::open(path)?);
    let mut reader = dec.read_info().map_err(png_err)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, info.color_type, info.bit_depth, buf))
}

pub fn read_rgb_png(path: &Path) -> Result<(usize, usize, Vec<u8>), DatasetError> {
    let (w, h, color, depth, buf) = decode_png(path)?;
    if depth != png::BitDepth::Eight {
        return Err(DatasetError::Image(format!("{}: expected 8-bit PNG", path.display())));
    }
    let rgb = match color {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        other => return Err(DatasetError::Image(format!("{}: unsupported {other:?}", path.display()))),
    };
    Ok((w, h, rgb))
}

fn read_tile(dir: &Path, id: &FootprintId) -> Result<ImageTile, DatasetError> {
    let (w, h, rgb) = read_rgb_png(&dir.join("tiles").join(format!("{id}.png")))?;
    let (mw, mh, _, depth, packed) = decode_png(&dir.join("masks").join(format!("{id}.png")))?;
    if (mw, mh) != (w, h) || depth != png::BitDepth::One {
        return Err(DatasetError::Image(format!("mask of {id} does not match its tile")));
    }
    let stride = w.div_ceil(8);
    let mask = (0..h * w)
        .map(|i| packed[(i / w) * stride + (i % w) / 8] & (0x80 >> (i % w % 8)) != 0)
        .collect();
    ImageTile::new(w, h, rgb, mask)
}

#[derive(Debug, Deserialize)]
struct SceneHeader {
    west: f64,
    north: f64,
    pixel_width: f64,
    pixel_height: f64,
}

/// Reads `<stem>.png` with its `<stem>.json` georeference.
pub fn read_scene(png_path: &Path) -> Result<Scene, DatasetError> {
    let (width, height, rgb) = read_rgb_png(png_path)?;
    let header: SceneHeader = serde_json::from_str(&fs::read_to_string(png_path.with_extension("json"))?)
        .map_err(|e| DatasetError::Format(format!("{}: {e}", png_path.display())))?;
    let scene = Scene {
        name: png_path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
        west: header.west,
        north: header.north,
        pixel_width: header.pixel_width,
        pixel_height: header.pixel_height,
        width,
        height,
        rgb,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn write_scene(png_path: &Path, scene: &Scene) -> Result<(), DatasetError> {
    let tile = ImageTile {
        width: scene.width,
        height: scene.height,
        rgb: scene.rgb.clone(),
        footprint_mask: vec![false; scene.width * scene.height],
    };
    write_rgb_png(png_path, &tile)?;
    let header = serde_json::json!({
        "west": scene.west, "north": scene.north,
        "pixel_width": scene.pixel_width, "pixel_height": scene.pixel_height,
    });
    fs::write(png_path.with_extension("json"), serde_json::to_string_pretty(&header).unwrap())?;
    Ok(())
}

/// All `*.png` scenes (with JSON sidecars) in a directory, sorted by name.
pub fn load_scenes(dir: &Path) -> Result<Vec<Scene>, DatasetError> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_scene(p)).collect()
}
