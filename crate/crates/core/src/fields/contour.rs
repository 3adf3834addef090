use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::FieldError;
use crate::geo::{segment_closest, GeoPoint, UtmZone};

/// Projected polyline vertices in metres.
type Ring = Vec<[f64; 2]>;

/// Points closer than this (metres) to a polyline take its level exactly.
const ON_CONTOUR_M: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourLevel {
    pub value: f64,
    pub polylines: Vec<Vec<GeoPoint>>,
}

/// Iso-level polylines of one seismic quantity for one event.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContourSet {
    pub name: String,
    /// 1 is the main shock, 2..=5 the strongest aftershocks.
    pub event_rank: u8,
    pub levels: Vec<ContourLevel>,
    pub zone: UtmZone,
    #[serde(skip)]
    projected: OnceLock<Result<Vec<Vec<Ring>>, String>>,
}

impl PartialEq for ContourSet {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.event_rank == other.event_rank
            && self.levels == other.levels
            && self.zone == other.zone
    }
}

impl ContourSet {
    /// Sorts levels ascending and merges polylines of equal value.
    pub fn new(
        name: impl Into<String>,
        event_rank: u8,
        mut levels: Vec<ContourLevel>,
        zone: UtmZone,
    ) -> Result<Self, FieldError> {
        let name = name.into();
        if levels.is_empty() {
            return Err(FieldError::EmptyContours(name));
        }
        if !(1..=5).contains(&event_rank) {
            return Err(FieldError::InvalidContours(format!(
                "{name}: event rank {event_rank} outside 1..=5"
            )));
        }
        for l in &levels {
            if !l.value.is_finite() {
                return Err(FieldError::InvalidContours(format!("{name}: non-finite level")));
            }
            if l.polylines.is_empty() || l.polylines.iter().any(|pl| pl.len() < 2) {
                return Err(FieldError::InvalidContours(format!(
                    "{name}: level {} needs polylines of at least 2 vertices",
                    l.value
                )));
            }
        }
        levels.sort_by(|a, b| a.value.total_cmp(&b.value));
        let mut merged: Vec<ContourLevel> = Vec::with_capacity(levels.len());
        for l in levels {
            match merged.last_mut() {
                Some(last) if last.value == l.value => last.polylines.extend(l.polylines),
                _ => merged.push(l),
            }
        }
        Ok(ContourSet {
            name,
            event_rank,
            levels: merged,
            zone,
            projected: OnceLock::new(),
        })
    }

    fn projected(&self) -> Result<&Vec<Vec<Vec<[f64; 2]>>>, FieldError> {
        let cached = self.projected.get_or_init(|| {
            self.levels
                .iter()
                .map(|l| {
                    l.polylines
                        .iter()
                        .map(|pl| {
                            pl.iter()
                                .map(|p| self.zone.project(*p).map(|q| [q.easting, q.northing]))
                                .collect::<Result<Vec<_>, _>>()
                        })
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())
        });
        cached
            .as_ref()
            .map_err(|e| FieldError::InvalidContours(format!("{}: {e}", self.name)))
    }

    pub fn min_level(&self) -> f64 {
        self.levels[0].value
    }

    pub fn max_level(&self) -> f64 {
        self.levels[self.levels.len() - 1].value
    }
}

/// Nearest distance and closest point from `p` to any polyline of a level.
fn nearest_on_level(polylines: &[Vec<[f64; 2]>], p: [f64; 2]) -> (f64, [f64; 2]) {
    let mut best = (f64::INFINITY, p);
    for pl in polylines {
        for w in pl.windows(2) {
            let (d2, q) = segment_closest(w[0], w[1], p);
            if d2 < best.0 {
                best = (d2, q);
            }
        }
    }
    (best.0.sqrt(), best.1)
}

/// Piecewise-linear interpolation between the tightest pair of adjacent
/// levels that bracket the point. A pair brackets `p` when the closest
/// points on the two levels lie on opposite sides of it. Points on a
/// polyline return its level; points bracketed by no pair take the value of
/// the nearest level.
pub fn interpolate_contours(cs: &ContourSet, p: GeoPoint) -> Result<f64, FieldError> {
    if cs.levels.is_empty() {
        return Err(FieldError::EmptyContours(cs.name.clone()));
    }
    let proj = cs.projected()?;
    let q = cs.zone.project(p)?;
    let q = [q.easting, q.northing];
    let nearest: Vec<(f64, [f64; 2])> = proj.iter().map(|pls| nearest_on_level(pls, q)).collect();

    let (closest_level, &(closest_d, _)) = nearest
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .expect("non-empty levels");
    if closest_d <= ON_CONTOUR_M {
        return Ok(cs.levels[closest_level].value);
    }

    let mut bracket: Option<(usize, f64, f64)> = None;
    for i in 0..nearest.len().saturating_sub(1) {
        let (d_lo, c_lo) = nearest[i];
        let (d_hi, c_hi) = nearest[i + 1];
        let dot = (c_lo[0] - q[0]) * (c_hi[0] - q[0]) + (c_lo[1] - q[1]) * (c_hi[1] - q[1]);
        if dot < 0.0 && bracket.is_none_or(|(_, a, b)| d_lo + d_hi < a + b) {
            bracket = Some((i, d_lo, d_hi));
        }
    }
    Ok(match bracket {
        Some((i, d_lo, d_hi)) => {
            let v_lo = cs.levels[i].value;
            let v_hi = cs.levels[i + 1].value;
            v_lo + (v_hi - v_lo) * d_lo / (d_lo + d_hi)
        }
        None => cs.levels[closest_level].value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gp(lon: f64, lat: f64) -> GeoPoint {
        GeoPoint::new(lon, lat).unwrap()
    }

    fn meridian_line(lon: f64) -> Vec<GeoPoint> {
        vec![gp(lon, 36.0), gp(lon, 38.0)]
    }

    fn parallel_lines() -> ContourSet {
        ContourSet::new(
            "MI-E1",
            1,
            vec![
                ContourLevel {
                    value: 7.0,
                    polylines: vec![meridian_line(39.01)],
                },
                ContourLevel {
                    value: 5.0,
                    polylines: vec![meridian_line(38.99)],
                },
            ],
            UtmZone::default(),
        )
        .unwrap()
    }

    #[test]
    fn levels_are_sorted() {
        let cs = parallel_lines();
        assert_eq!(cs.min_level(), 5.0);
        assert_eq!(cs.max_level(), 7.0);
    }

    #[test]
    fn on_contour_returns_level() {
        let cs = ContourSet::new(
            "PGA-E1",
            1,
            vec![
                ContourLevel {
                    value: 6.0,
                    polylines: vec![vec![gp(38.0, 37.0), gp(38.5, 37.2), gp(39.0, 37.0)]],
                },
                ContourLevel {
                    value: 4.0,
                    polylines: vec![meridian_line(38.2)],
                },
            ],
            UtmZone::default(),
        )
        .unwrap();
        assert_eq!(interpolate_contours(&cs, gp(38.5, 37.2)).unwrap(), 6.0);
        assert_eq!(interpolate_contours(&cs, gp(39.0, 37.0)).unwrap(), 6.0);
    }

    #[test]
    fn midway_between_parallel_contours() {
        // Symmetric about the zone 37 central meridian, so equidistant in metres.
        let v = interpolate_contours(&parallel_lines(), gp(39.0, 37.0)).unwrap();
        assert!((v - 6.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn outside_all_contours_clamps() {
        let cs = parallel_lines();
        assert_eq!(interpolate_contours(&cs, gp(39.5, 37.0)).unwrap(), 7.0);
        assert_eq!(interpolate_contours(&cs, gp(38.5, 37.0)).unwrap(), 5.0);
    }

    #[test]
    fn invalid_sets_are_rejected() {
        assert!(matches!(
            ContourSet::new("x", 1, vec![], UtmZone::default()),
            Err(FieldError::EmptyContours(_))
        ));
        let short = ContourLevel {
            value: 1.0,
            polylines: vec![vec![gp(39.0, 37.0)]],
        };
        assert!(ContourSet::new("x", 1, vec![short], UtmZone::default()).is_err());
    }
}
