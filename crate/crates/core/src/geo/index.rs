use std::collections::{BTreeMap, HashSet};

use rstar::{PointDistance, RTree, RTreeObject, AABB};
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{contains, ring_distance_2, Footprint, FootprintId, GeoError, GeoPoint, UtmZone};

#[derive(Debug, Clone)]
struct Entry {
    slot: usize,
    ring_m: Vec<[f64; 2]>,
    envelope: AABB<[f64; 2]>,
}

impl RTreeObject for Entry {
    type Envelope = AABB<[f64; 2]>;

    fn envelope(&self) -> Self::Envelope {
        self.envelope
    }
}

impl PointDistance for Entry {
    fn distance_2(&self, point: &[f64; 2]) -> f64 {
        ring_distance_2(&self.ring_m, *point)
    }
}

/// Immutable R-tree over footprint outlines in projected metres.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    tree: RTree<Entry>,
    footprints: Vec<Footprint>,
    zone: UtmZone,
}

/// Result of a nearest-footprint query.
#[derive(Debug, Clone, PartialEq)]
pub struct Nearest<'a> {
    pub footprint: &'a Footprint,
    /// Metres; zero when the point lies inside.
    pub distance: f64,
}

impl SpatialIndex {
    pub fn build(footprints: Vec<Footprint>, zone: UtmZone) -> Result<Self, GeoError> {
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(footprints.len());
        for (slot, fp) in footprints.iter().enumerate() {
            fp.validate()?;
            if !seen.insert(fp.id.clone()) {
                return Err(GeoError::DuplicateId(fp.id.to_string()));
            }
            let ring_m = fp.ring_projected(&zone)?;
            let envelope = AABB::from_points(ring_m.iter());
            entries.push(Entry {
                slot,
                ring_m,
                envelope,
            });
        }
        Ok(SpatialIndex {
            tree: RTree::bulk_load(entries),
            footprints,
            zone,
        })
    }

    pub fn len(&self) -> usize {
        self.tree.size()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zone(&self) -> UtmZone {
        self.zone
    }

    pub fn footprints(&self) -> &[Footprint] {
        &self.footprints
    }

    pub fn get(&self, id: &FootprintId) -> Option<&Footprint> {
        self.footprints.iter().find(|f| &f.id == id)
    }

    /// Nearest footprint by Euclidean distance in metres (zero inside);
    /// equidistant candidates resolve to the lowest id.
    pub fn nearest(&self, p: GeoPoint) -> Result<Option<Nearest<'_>>, GeoError> {
        let q = self.zone.project(p)?;
        let q = [q.easting, q.northing];
        let mut best: Option<(f64, &Footprint)> = None;
        for (entry, d2) in self.tree.nearest_neighbor_iter_with_distance_2(&q) {
            let fp = &self.footprints[entry.slot];
            match best {
                None => best = Some((d2, fp)),
                Some((bd, bfp)) => {
                    if d2 > bd {
                        break;
                    }
                    if fp.id < bfp.id {
                        best = Some((d2, fp));
                    }
                }
            }
        }
        Ok(best.map(|(d2, footprint)| Nearest {
            footprint,
            distance: d2.sqrt(),
        }))
    }

    /// Digest of the indexed content; unchanged by queries.
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        for e in self.tree.iter() {
            h.update(self.footprints[e.slot].id.0.as_bytes());
            for v in &e.ring_m {
                h.update(v[0].to_le_bytes());
                h.update(v[1].to_le_bytes());
            }
        }
        let mut slots: Vec<usize> = self.tree.iter().map(|e| e.slot).collect();
        slots.sort_unstable();
        for s in slots {
            h.update((s as u64).to_le_bytes());
        }
        crate::hex(&h.finalize())
    }
}

/// Why a ground-truth point was not assigned.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    NoFootprints,
    NotContained {
        nearest: FootprintId,
        distance_m: f64,
    },
    /// Another point in the same footprint carried a more severe label
    /// (or an equal label at an earlier position).
    Superseded { footprint: FootprintId },
    Invalid { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment<L> {
    pub footprint: FootprintId,
    pub label: L,
    /// Position of the retained point in the input sequence.
    pub point_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub point_index: usize,
    pub point: GeoPoint,
    #[serde(flatten)]
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruthMapping<L> {
    /// One entry per footprint, sorted by footprint id.
    pub assigned: Vec<Assignment<L>>,
    /// Sorted by input position.
    pub rejected: Vec<Rejection>,
}

/// Two-step join: nearest footprint through the index, then a containment
/// filter. Several points inside one footprint keep the most severe label.
pub fn map_ground_truth<L: Copy + Ord>(
    index: &SpatialIndex,
    points: &[(GeoPoint, L)],
) -> GroundTruthMapping<L> {
    let mut winners: BTreeMap<FootprintId, (L, usize)> = BTreeMap::new();
    let mut rejected = Vec::new();
    for (i, &(p, label)) in points.iter().enumerate() {
        let nearest = match index.nearest(p) {
            Ok(n) => n,
            Err(e) => {
                rejected.push(Rejection {
                    point_index: i,
                    point: p,
                    reason: RejectReason::Invalid {
                        message: e.to_string(),
                    },
                });
                continue;
            }
        };
        let Some(n) = nearest else {
            rejected.push(Rejection {
                point_index: i,
                point: p,
                reason: RejectReason::NoFootprints,
            });
            continue;
        };
        if !contains(n.footprint, p) {
            rejected.push(Rejection {
                point_index: i,
                point: p,
                reason: RejectReason::NotContained {
                    nearest: n.footprint.id.clone(),
                    distance_m: n.distance,
                },
            });
            continue;
        }
        let id = n.footprint.id.clone();
        match winners.get_mut(&id) {
            None => {
                winners.insert(id, (label, i));
            }
            Some(current) => {
                let loser = if label > current.0 {
                    std::mem::replace(current, (label, i)).1
                } else {
                    i
                };
                rejected.push(Rejection {
                    point_index: loser,
                    point: points[loser].0,
                    reason: RejectReason::Superseded { footprint: id },
                });
            }
        }
    }
    rejected.sort_by_key(|r| r.point_index);
    let assigned = winners
        .into_iter()
        .map(|(footprint, (label, point_index))| Assignment {
            footprint,
            label,
            point_index,
        })
        .collect();
    GroundTruthMapping { assigned, rejected }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(id: u64, lon: f64, lat: f64, h: f64) -> Footprint {
        let g = |x, y| GeoPoint::new(x, y).unwrap();
        Footprint::new(
            id,
            vec![
                g(lon - h, lat - h),
                g(lon + h, lat - h),
                g(lon + h, lat + h),
                g(lon - h, lat + h),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn empty_index_matches_nothing() {
        let idx = SpatialIndex::build(vec![], UtmZone::default()).unwrap();
        assert_eq!(idx.len(), 0);
        let p = GeoPoint::new(37.0, 37.0).unwrap();
        assert!(idx.nearest(p).unwrap().is_none());
        let m = map_ground_truth(&idx, &[(p, 1u8)]);
        assert!(m.assigned.is_empty());
        assert_eq!(m.rejected[0].reason, RejectReason::NoFootprints);
    }

    #[test]
    fn single_footprint_is_always_nearest() {
        let idx = SpatialIndex::build(vec![square(1, 37.0, 37.0, 1e-4)], UtmZone::default()).unwrap();
        for (lon, lat) in [(36.0, 36.0), (38.5, 37.2), (37.0, 37.0)] {
            let n = idx.nearest(GeoPoint::new(lon, lat).unwrap()).unwrap().unwrap();
            assert_eq!(n.footprint.id, FootprintId::from(1));
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let err = SpatialIndex::build(
            vec![square(1, 37.0, 37.0, 1e-4), square(1, 37.1, 37.0, 1e-4)],
            UtmZone::default(),
        )
        .unwrap_err();
        assert!(matches!(err, GeoError::DuplicateId(_)));
    }

    #[test]
    fn equidistant_tie_goes_to_lowest_id() {
        // Mirror-image footprints about the central meridian of zone 37.
        let idx = SpatialIndex::build(
            vec![square(5, 39.001, 37.0, 1e-4), square(2, 38.999, 37.0, 1e-4)],
            UtmZone::default(),
        )
        .unwrap();
        let n = idx.nearest(GeoPoint::new(39.0, 37.0).unwrap()).unwrap().unwrap();
        assert_eq!(n.footprint.id, FootprintId::from(2));
    }

    #[test]
    fn most_severe_label_wins_within_a_footprint() {
        let idx = SpatialIndex::build(
            vec![square(1, 37.0, 37.0, 1e-4), square(2, 37.01, 37.0, 1e-4)],
            UtmZone::default(),
        )
        .unwrap();
        let p = |lon: f64| GeoPoint::new(lon, 37.0).unwrap();
        let pts = [
            (p(37.0), 2u8),
            (p(37.00005), 4u8),
            (p(37.01), 1u8),
            (p(37.5), 3u8),
            (p(36.99995), 4u8),
        ];
        let m = map_ground_truth(&idx, &pts);
        assert_eq!(m.assigned.len(), 2);
        assert_eq!(m.assigned[0].label, 4);
        assert_eq!(m.assigned[0].point_index, 1);
        assert_eq!(m.assigned[1].label, 1);
        let reasons: Vec<usize> = m.rejected.iter().map(|r| r.point_index).collect();
        assert_eq!(reasons, [0, 3, 4]);
        assert!(matches!(m.rejected[1].reason, RejectReason::NotContained { .. }));
    }

    #[test]
    fn queries_do_not_change_state() {
        let idx = SpatialIndex::build(
            (0..20).map(|i| square(i, 37.0 + i as f64 * 1e-3, 37.0, 1e-4)).collect(),
            UtmZone::default(),
        )
        .unwrap();
        let before = idx.state_hash();
        let p = GeoPoint::new(37.0042, 37.0001).unwrap();
        let a = idx.nearest(p).unwrap().map(|n| n.footprint.id.clone());
        let b = idx.nearest(p).unwrap().map(|n| n.footprint.id.clone());
        assert_eq!(a, b);
        assert_eq!(before, idx.state_hash());
    }
}
