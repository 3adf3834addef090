use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{GeoError, UtmZone};

/// WGS84 longitude/latitude in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self, GeoError> {
        let p = GeoPoint { lon, lat };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !self.lon.is_finite() || !self.lat.is_finite() {
            return Err(GeoError::NonFinite);
        }
        if !(-180.0..=180.0).contains(&self.lon) || !(-90.0..=90.0).contains(&self.lat) {
            return Err(GeoError::InvalidCoordinate {
                lon: self.lon,
                lat: self.lat,
            });
        }
        Ok(())
    }

    fn xy(&self) -> [f64; 2] {
        [self.lon, self.lat]
    }
}

/// Footprint identifier. Integer-valued ids order numerically and sort
/// before all other ids, which order lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FootprintId(pub String);

impl FootprintId {
    fn numeric(&self) -> Option<u64> {
        self.0.parse().ok()
    }
}

impl From<&str> for FootprintId {
    fn from(s: &str) -> Self {
        FootprintId(s.to_string())
    }
}

impl From<u64> for FootprintId {
    fn from(v: u64) -> Self {
        FootprintId(v.to_string())
    }
}

impl fmt::Display for FootprintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Ord for FootprintId {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.numeric(), other.numeric()) {
            (Some(a), Some(b)) => a.cmp(&b).then_with(|| self.0.cmp(&other.0)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for FootprintId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A building outline: one exterior ring, no holes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub id: FootprintId,
    /// Stored open (closing vertex removed).
    pub exterior: Vec<GeoPoint>,
    pub region: Option<String>,
}

impl Footprint {
    /// Builds and validates a footprint. A trailing vertex equal to the
    /// first is dropped.
    pub fn new(
        id: impl Into<FootprintId>,
        ring: Vec<GeoPoint>,
        region: Option<String>,
    ) -> Result<Self, GeoError> {
        let id = id.into();
        let mut exterior = ring;
        if exterior.len() > 1 && exterior.first() == exterior.last() {
            exterior.pop();
        }
        let fp = Footprint {
            id,
            exterior,
            region,
        };
        fp.validate()?;
        Ok(fp)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        let invalid = |reason: &str| GeoError::InvalidFootprint {
            id: self.id.to_string(),
            reason: reason.to_string(),
        };
        for p in &self.exterior {
            p.validate()?;
        }
        let mut distinct: Vec<[f64; 2]> = Vec::new();
        for p in &self.exterior {
            if !distinct.contains(&p.xy()) {
                distinct.push(p.xy());
            }
        }
        if distinct.len() < 3 {
            return Err(invalid("fewer than 3 distinct vertices"));
        }
        let ring: Vec<[f64; 2]> = self.exterior.iter().map(GeoPoint::xy).collect();
        if signed_area(&ring) == 0.0 {
            return Err(GeoError::Degenerate(self.id.to_string()));
        }
        if self_intersects(&ring) {
            return Err(invalid("self-intersecting ring"));
        }
        Ok(())
    }

    pub fn ring_xy(&self) -> Vec<[f64; 2]> {
        self.exterior.iter().map(GeoPoint::xy).collect()
    }

    /// Ring in projected metres.
    pub fn ring_projected(&self, zone: &UtmZone) -> Result<Vec<[f64; 2]>, GeoError> {
        self.exterior
            .iter()
            .map(|p| zone.project(*p).map(|q| [q.easting, q.northing]))
            .collect()
    }

    /// Bounding box as (min lon, min lat, max lon, max lat).
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.exterior {
            b.0 = b.0.min(p.lon);
            b.1 = b.1.min(p.lat);
            b.2 = b.2.max(p.lon);
            b.3 = b.3.max(p.lat);
        }
        b
    }
}

/// Shoelace signed area of an open ring (counter-clockwise positive).
pub fn signed_area(ring: &[[f64; 2]]) -> f64 {
    let n = ring.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc / 2.0
}

/// Area-weighted centroid of a simple planar ring.
pub fn ring_centroid(ring: &[[f64; 2]]) -> Option<[f64; 2]> {
    let n = ring.len();
    if n < 3 {
        return None;
    }
    // Shift to the first vertex to limit cancellation on projected coordinates.
    let o = ring[0];
    let mut area2 = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let a = [ring[i][0] - o[0], ring[i][1] - o[1]];
        let b = [ring[(i + 1) % n][0] - o[0], ring[(i + 1) % n][1] - o[1]];
        let cross = a[0] * b[1] - b[0] * a[1];
        area2 += cross;
        cx += (a[0] + b[0]) * cross;
        cy += (a[1] + b[1]) * cross;
    }
    if area2 == 0.0 {
        return None;
    }
    Some([o[0] + cx / (3.0 * area2), o[1] + cy / (3.0 * area2)])
}

/// Geometric centroid, computed in projected metres and mapped back.
pub fn centroid(fp: &Footprint, zone: &UtmZone) -> Result<GeoPoint, GeoError> {
    let ring = fp.ring_projected(zone)?;
    let c = ring_centroid(&ring).ok_or_else(|| GeoError::Degenerate(fp.id.to_string()))?;
    zone.unproject_xy(c[0], c[1])
}

/// Closed-boundary point-in-ring test: points on an edge or vertex are inside.
pub fn ring_contains(ring: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = ring.len();
    let mut inside = false;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if on_segment(a, b, p) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

pub fn contains(fp: &Footprint, p: GeoPoint) -> bool {
    ring_contains(&fp.ring_xy(), p.xy())
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    if cross != 0.0 {
        return false;
    }
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Squared distance from `p` to segment `ab`, plus the closest point.
pub fn segment_closest(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> (f64, [f64; 2]) {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    };
    let q = [a[0] + t * d[0], a[1] + t * d[1]];
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    (dx * dx + dy * dy, q)
}

/// Squared distance from `p` to a polygon ring; zero inside.
pub fn ring_distance_2(ring: &[[f64; 2]], p: [f64; 2]) -> f64 {
    if ring_contains(ring, p) {
        return 0.0;
    }
    let n = ring.len();
    (0..n)
        .map(|i| segment_closest(ring[i], ring[(i + 1) % n], p).0)
        .fold(f64::INFINITY, f64::min)
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

fn self_intersects(ring: &[[f64; 2]]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 1)..n {
            // adjacent edges share a vertex by construction
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return true;
            }
        }
    }
    false
}
