//! GeoJSON footprint collections and ground-truth CSV.

use std::path::Path;

use serde_json::{json, Value};

use super::{Footprint, FootprintId, GeoError, GeoPoint};

fn parse_err(msg: impl Into<String>) -> GeoError {
    GeoError::Parse(msg.into())
}

fn property_string(props: Option<&Value>, key: &str) -> Option<String> {
    match props?.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_ring(coords: &Value) -> Result<Vec<GeoPoint>, GeoError> {
    let rings = coords
        .as_array()
        .ok_or_else(|| parse_err("polygon coordinates must be an array of rings"))?;
    let exterior = rings
        .first()
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("polygon has no exterior ring"))?;
    if rings.len() > 1 {
        return Err(parse_err("polygons with holes are not supported"));
    }
    exterior.iter().map(parse_position).collect()
}

pub(crate) fn parse_position(v: &Value) -> Result<GeoPoint, GeoError> {
    let a = v
        .as_array()
        .filter(|a| a.len() >= 2)
        .ok_or_else(|| parse_err("position must be [lon, lat]"))?;
    let lon = a[0].as_f64().ok_or_else(|| parse_err("lon is not a number"))?;
    let lat = a[1].as_f64().ok_or_else(|| parse_err("lat is not a number"))?;
    GeoPoint::new(lon, lat)
}

pub(crate) fn features(doc: &Value) -> Result<&Vec<Value>, GeoError> {
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(parse_err("expected a FeatureCollection"));
    }
    doc.get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("FeatureCollection without features"))
}

/// Parses Polygon features keyed by the `id_key` property.
pub fn parse_polygons(doc: &Value, id_key: &str) -> Result<Vec<Footprint>, GeoError> {
    let mut out = Vec::new();
    for (i, f) in features(doc)?.iter().enumerate() {
        let props = f.get("properties");
        let id = property_string(props, id_key)
            .or_else(|| match f.get("id") {
                Some(Value::String(s)) => Some(s.clone()),
                Some(Value::Number(n)) => Some(n.to_string()),
                _ => None,
            })
            .ok_or_else(|| parse_err(format!("feature {i} has no \"{id_key}\"")))?;
        let geom = f
            .get("geometry")
            .ok_or_else(|| parse_err(format!("feature {i} has no geometry")))?;
        if geom.get("type").and_then(Value::as_str) != Some("Polygon") {
            return Err(parse_err(format!("feature {i} is not a Polygon")));
        }
        let ring = parse_ring(geom.get("coordinates").unwrap_or(&Value::Null))?;
        let region = property_string(props, "region");
        out.push(Footprint::new(FootprintId(id), ring, region)?);
    }
    Ok(out)
}

pub fn read_footprints(path: &Path) -> Result<Vec<Footprint>, GeoError> {
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| parse_err(e.to_string()))?;
    parse_polygons(&doc, "id")
}

/// Named polygons (e.g. study regions) keyed by their `name` property.
pub fn read_named_polygons(path: &Path) -> Result<Vec<(String, Footprint)>, GeoError> {
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| parse_err(e.to_string()))?;
    Ok(parse_polygons(&doc, "name")?
        .into_iter()
        .map(|fp| (fp.id.0.clone(), fp))
        .collect())
}

pub fn polygon_geometry(fp: &Footprint) -> Value {
    let mut ring: Vec<Value> = fp.exterior.iter().map(|p| json!([p.lon, p.lat])).collect();
    if let Some(first) = ring.first().cloned() {
        ring.push(first);
    }
    json!({ "type": "Polygon", "coordinates": [ring] })
}

pub fn footprints_to_geojson(fps: &[Footprint]) -> Value {
    let features: Vec<Value> = fps
        .iter()
        .map(|fp| {
            let mut props = serde_json::Map::new();
            props.insert("id".into(), Value::String(fp.id.0.clone()));
            if let Some(r) = &fp.region {
                props.insert("region".into(), Value::String(r.clone()));
            }
            json!({ "type": "Feature", "properties": props, "geometry": polygon_geometry(fp) })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn write_footprints(path: &Path, fps: &[Footprint]) -> Result<(), GeoError> {
    let s = serde_json::to_string_pretty(&footprints_to_geojson(fps))
        .map_err(|e| parse_err(e.to_string()))?;
    std::fs::write(path, s)?;
    Ok(())
}

#[derive(Debug, serde::Deserialize, serde::Serialize)]
struct GroundTruthRow {
    lon: f64,
    lat: f64,
    label: i64,
}

/// Reads `lon,lat,label` rows; labels are validated later against a scheme.
pub fn read_ground_truth(path: &Path) -> Result<Vec<(GeoPoint, i64)>, GeoError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| parse_err(e.to_string()))?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: GroundTruthRow = row.map_err(|e| parse_err(e.to_string()))?;
        out.push((GeoPoint::new(row.lon, row.lat)?, row.label));
    }
    Ok(out)
}

pub fn write_ground_truth(path: &Path, rows: &[(GeoPoint, i64)]) -> Result<(), GeoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| parse_err(e.to_string()))?;
    for (p, label) in rows {
        w.serialize(GroundTruthRow {
            lon: p.lon,
            lat: p.lat,
            label: *label,
        })
        .map_err(|e| parse_err(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
