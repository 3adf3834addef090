//! ESRI ASCII grids, JSON-headed binary grids, and contour GeoJSON.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde_json::{json, Value};

use super::{ContourLevel, ContourSet, Crs, FieldCatalog, FieldError, RasterGrid};
use crate::geo::io::{features, parse_position};
use crate::geo::UtmZone;

fn bad(msg: impl Into<String>) -> FieldError {
    FieldError::Format(msg.into())
}

/// Reads an ESRI ASCII grid in geographic coordinates.
pub fn read_ascii_grid(path: &Path, name: &str) -> Result<RasterGrid, FieldError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut header = std::collections::HashMap::new();
    let mut values = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let first = trimmed.split_whitespace().next().unwrap_or_default();
        if first.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) && values.is_empty() {
            let mut parts = trimmed.split_whitespace();
            let key = parts.next().unwrap_or_default().to_ascii_lowercase();
            let val: f64 = parts
                .next()
                .ok_or_else(|| bad(format!("header {key} has no value")))?
                .parse()
                .map_err(|_| bad(format!("header {key} is not numeric")))?;
            header.insert(key, val);
        } else {
            for tok in trimmed.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|_| bad(format!("bad value {tok}")))?);
            }
        }
    }
    let get = |k: &str| header.get(k).copied().ok_or_else(|| bad(format!("missing {k}")));
    let n_cols = get("ncols")? as usize;
    let n_rows = get("nrows")? as usize;
    let cell = get("cellsize")?;
    let nodata = header.get("nodata_value").copied().unwrap_or(-9999.0);
    let x_ll = match header.get("xllcorner") {
        Some(v) => *v,
        None => get("xllcenter")? - cell / 2.0,
    };
    let y_ll = match header.get("yllcorner") {
        Some(v) => *v,
        None => get("yllcenter")? - cell / 2.0,
    };
    RasterGrid::new(
        name,
        Crs::Geographic,
        (x_ll, y_ll + n_rows as f64 * cell),
        cell,
        n_rows,
        n_cols,
        nodata,
        values,
    )
}

pub fn write_ascii_grid(path: &Path, grid: &RasterGrid) -> Result<(), FieldError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "ncols {}", grid.n_cols)?;
    writeln!(f, "nrows {}", grid.n_rows)?;
    writeln!(f, "xllcorner {}", grid.origin_x)?;
    writeln!(f, "yllcorner {}", grid.origin_y - grid.n_rows as f64 * grid.cell_size)?;
    writeln!(f, "cellsize {}", grid.cell_size)?;
    writeln!(f, "NODATA_value {}", grid.nodata)?;
    for r in 0..grid.n_rows {
        let row: Vec<String> = (0..grid.n_cols).map(|c| grid.value(r, c).to_string()).collect();
        writeln!(f, "{}", row.join(" "))?;
    }
    f.flush()?;
    Ok(())
}

/// Reads `<stem>.grid.json` plus the little-endian f32 payload `<stem>.grid.bin`.
pub fn read_binary_grid(json_path: &Path) -> Result<RasterGrid, FieldError> {
    let mut grid: RasterGrid = serde_json::from_str(&fs::read_to_string(json_path)?)
        .map_err(|e| bad(format!("{}: {e}", json_path.display())))?;
    let bin = binary_payload_path(json_path);
    let bytes = fs::read(&bin)?;
    if bytes.len() != grid.n_rows * grid.n_cols * 4 {
        return Err(bad(format!(
            "{}: expected {} bytes, found {}",
            bin.display(),
            grid.n_rows * grid.n_cols * 4,
            bytes.len()
        )));
    }
    grid.values = bytes
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    grid.validate()?;
    Ok(grid)
}

pub fn write_binary_grid(json_path: &Path, grid: &RasterGrid) -> Result<(), FieldError> {
    let header = serde_json::to_string_pretty(grid).map_err(|e| bad(e.to_string()))?;
    fs::write(json_path, header)?;
    let mut bytes = Vec::with_capacity(grid.values.len() * 4);
    for v in &grid.values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(binary_payload_path(json_path), bytes)?;
    Ok(())
}

fn binary_payload_path(json_path: &Path) -> std::path::PathBuf {
    let s = json_path.to_string_lossy();
    let stem = s.strip_suffix(".json").unwrap_or(&s);
    std::path::PathBuf::from(format!("{stem}.bin"))
}

/// LineString features carrying `level` and `event_rank` properties.
pub fn parse_contours(doc: &Value, name: &str, zone: UtmZone) -> Result<ContourSet, FieldError> {
    let feats = features(doc).map_err(|e| bad(e.to_string()))?;
    let mut levels: Vec<ContourLevel> = Vec::new();
    let mut rank: Option<u8> = None;
    for (i, f) in feats.iter().enumerate() {
        let props = f.get("properties");
        let level = props
            .and_then(|p| p.get("level"))
            .and_then(Value::as_f64)
            .ok_or_else(|| bad(format!("contour feature {i} has no numeric level")))?;
        let r = props
            .and_then(|p| p.get("event_rank"))
            .and_then(Value::as_u64)
            .ok_or_else(|| bad(format!("contour feature {i} has no event_rank")))? as u8;
        if *rank.get_or_insert(r) != r {
            return Err(bad(format!("{name}: mixed event ranks in one contour set")));
        }
        let geom = f.get("geometry").ok_or_else(|| bad("feature without geometry"))?;
        let lines: Vec<&Value> = match geom.get("type").and_then(Value::as_str) {
            Some("LineString") => vec![geom.get("coordinates").unwrap_or(&Value::Null)],
            Some("MultiLineString") => geom
                .get("coordinates")
                .and_then(Value::as_array)
                .map(|a| a.iter().collect())
                .unwrap_or_default(),
            other => return Err(bad(format!("unsupported contour geometry {other:?}"))),
        };
        for line in lines {
            let pts = line
                .as_array()
                .ok_or_else(|| bad("LineString coordinates must be an array"))?
                .iter()
                .map(parse_position)
                .collect::<Result<Vec<_>, _>>()?;
            levels.push(ContourLevel {
                value: level,
                polylines: vec![pts],
            });
        }
    }
    ContourSet::new(name, rank.unwrap_or(1), levels, zone)
}

pub fn contours_to_geojson(cs: &ContourSet) -> Value {
    let mut feats = Vec::new();
    for l in &cs.levels {
        for pl in &l.polylines {
            let coords: Vec<Value> = pl.iter().map(|p| json!([p.lon, p.lat])).collect();
            feats.push(json!({
                "type": "Feature",
                "properties": {"level": l.value, "event_rank": cs.event_rank},
                "geometry": {"type": "LineString", "coordinates": coords}
            }));
        }
    }
    json!({"type": "FeatureCollection", "name": cs.name, "features": feats})
}

pub fn read_contours(path: &Path, name: &str, zone: UtmZone) -> Result<ContourSet, FieldError> {
    let doc: Value =
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| bad(e.to_string()))?;
    parse_contours(&doc, name, zone)
}

pub fn write_contours(path: &Path, cs: &ContourSet) -> Result<(), FieldError> {
    let s = serde_json::to_string(&contours_to_geojson(cs)).map_err(|e| bad(e.to_string()))?;
    fs::write(path, s)?;
    Ok(())
}

/// Loads every `*.asc`, `*.grid.json` and `*.contours.geojson` in `dir`,
/// naming each field after its file stem.
pub fn load_catalog(dir: &Path, zone: UtmZone) -> Result<FieldCatalog, FieldError> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    let mut cat = FieldCatalog::new();
    for e in entries {
        let path = e.path();
        let fname = e.file_name().to_string_lossy().into_owned();
        if let Some(stem) = fname.strip_suffix(".asc") {
            cat.add_raster(read_ascii_grid(&path, stem)?)?;
        } else if let Some(stem) = fname.strip_suffix(".grid.json") {
            let mut g = read_binary_grid(&path)?;
            g.name = stem.to_string();
            cat.add_raster(g)?;
        } else if let Some(stem) = fname.strip_suffix(".contours.geojson") {
            cat.add_contours(read_contours(&path, stem, zone)?)?;
        }
    }
    Ok(cat)
}
