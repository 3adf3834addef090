use std::collections::BTreeMap;
use std::fs;

use proptest::prelude::*;
use quake_pda::dataset::{
    build_dataset, class_weights, class_weights_from_counts, crop_building_image, dataset_hash,
    split_by_region, split_random, BuildOptions, BuildingRecord, Dataset, ImageTile, LabelScheme,
    MetadataSchema, MetadataVector, Normalizer, Scene,
};
use quake_pda::fields::{interpolate_contours, sample_raster};
use quake_pda::geo::{Footprint, FootprintId, GeoPoint, UtmZone};
use quake_pda::synthetic;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gp(lon: f64, lat: f64) -> GeoPoint {
    GeoPoint::new(lon, lat).unwrap()
}

fn checkerboard(w: usize, h: usize, cell: usize) -> Scene {
    let mut rgb = Vec::with_capacity(w * h * 3);
    for r in 0..h {
        for c in 0..w {
            let on = (r / cell + c / cell).is_multiple_of(2);
            rgb.extend_from_slice(if on { &[230, 40, 90] } else { &[10, 200, 60] });
        }
    }
    Scene {
        name: "checker".into(),
        west: 37.0,
        north: 37.01,
        pixel_width: 1e-4,
        pixel_height: 1e-4,
        width: w,
        height: h,
        rgb,
    }
}

/// Crop oracle: map every output pixel centre to fractional scene pixel
/// coordinates, clamp, and blend the four neighbours.
fn crop_oracle(scene: &Scene, fp: &Footprint, out: usize, margin: f64) -> Vec<u8> {
    let lons: Vec<f64> = fp.exterior.iter().map(|p| p.lon).collect();
    let lats: Vec<f64> = fp.exterior.iter().map(|p| p.lat).collect();
    let (mut w, mut e) = (lons.iter().cloned().fold(f64::MAX, f64::min), lons.iter().cloned().fold(f64::MIN, f64::max));
    let (mut s, mut n) = (lats.iter().cloned().fold(f64::MAX, f64::min), lats.iter().cloned().fold(f64::MIN, f64::max));
    let (gx, gy) = ((e - w) * margin * 0.5, (n - s) * margin * 0.5);
    w -= gx;
    e += gx;
    s -= gy;
    n += gy;
    let px = |r: isize, c: isize, k: usize| -> f64 {
        let r = r.clamp(0, scene.height as isize - 1) as usize;
        let c = c.clamp(0, scene.width as isize - 1) as usize;
        scene.rgb[(r * scene.width + c) * 3 + k] as f64
    };
    let mut out_px = Vec::new();
    for i in 0..out {
        for j in 0..out {
            let lon = w + (e - w) * (j as f64 + 0.5) / out as f64;
            let lat = n - (n - s) * (i as f64 + 0.5) / out as f64;
            let fx = ((lon - scene.west) / scene.pixel_width - 0.5).clamp(0.0, (scene.width - 1) as f64);
            let fy = ((scene.north - lat) / scene.pixel_height - 0.5).clamp(0.0, (scene.height - 1) as f64);
            let (c0, r0) = (fx.floor() as isize, fy.floor() as isize);
            let (tx, ty) = (fx - c0 as f64, fy - r0 as f64);
            for k in 0..3 {
                let v = px(r0, c0, k) * (1.0 - tx) * (1.0 - ty)
                    + px(r0, c0 + 1, k) * tx * (1.0 - ty)
                    + px(r0 + 1, c0, k) * (1.0 - tx) * ty
                    + px(r0 + 1, c0 + 1, k) * tx * ty;
                out_px.push(v.round() as u8);
            }
        }
    }
    out_px
}

#[test]
fn crop_matches_oracle_on_checkerboard() {
    let scene = checkerboard(120, 100, 7);
    let fp = Footprint::new(
        "b",
        vec![gp(37.0023, 37.0021), gp(37.0071, 37.0027), gp(37.0066, 37.0063), gp(37.0029, 37.0058)],
        None,
    )
    .unwrap();
    for (out, margin) in [(16, 0.2), (37, 0.0), (64, 0.5)] {
        let tile = crop_building_image(&scene, &fp, out, margin).unwrap();
        let want = crop_oracle(&scene, &fp, out, margin);
        for (a, b) in tile.rgb.iter().zip(&want) {
            assert!((*a as i32 - *b as i32).abs() <= 1, "{a} vs {b}");
        }
    }
}

#[test]
fn fifty_building_pipeline_matches_scripted_oracle() {
    let schema = MetadataSchema::turkiye_l();
    let town = synthetic::town(50, schema.clone(), LabelScheme::L4, 21);
    let opts = BuildOptions {
        tile_size: 16,
        ..BuildOptions::default()
    };
    let (records, report) = build_dataset(
        town.footprints.clone(),
        &town.ground_truth,
        &town.catalog,
        &town.scenes,
        &schema,
        town.scheme,
        &opts,
    )
    .unwrap();

    // Scripted oracle: brute-force containment, planar centroid in UTM,
    // per-feature sampling.
    let zone = UtmZone::default();
    let mut want: BTreeMap<FootprintId, (u8, Vec<f64>)> = BTreeMap::new();
    for (p, label) in &town.ground_truth {
        let Some(fp) = town.footprints.iter().find(|f| inside(&f.exterior, *p)) else {
            continue;
        };
        let xy: Vec<[f64; 2]> = fp
            .exterior
            .iter()
            .map(|q| {
                let pp = zone.project(*q).unwrap();
                let o = zone.project(fp.exterior[0]).unwrap();
                [pp.easting - o.easting, pp.northing - o.northing]
            })
            .collect();
        let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for k in 0..xy.len() {
            let (p0, p1) = (xy[k], xy[(k + 1) % xy.len()]);
            let cr = p0[0] * p1[1] - p1[0] * p0[1];
            a += cr;
            cx += (p0[0] + p1[0]) * cr;
            cy += (p0[1] + p1[1]) * cr;
        }
        let o = zone.project(fp.exterior[0]).unwrap();
        let c = zone.unproject_xy(o.easting + cx / (3.0 * a), o.northing + cy / (3.0 * a)).unwrap();
        let meta: Vec<f64> = schema
            .features
            .iter()
            .map(|f| match town.catalog.raster(&f.name) {
                Some(g) => sample_raster(g, c).unwrap(),
                None => interpolate_contours(town.catalog.contour_set(&f.name).unwrap(), c).unwrap(),
            })
            .collect();
        let entry = want.entry(fp.id.clone()).or_insert((*label as u8, meta));
        entry.0 = entry.0.max(*label as u8);
    }

    assert_eq!(records.len(), 50);
    assert_eq!(records.len(), want.len());
    assert_eq!(report.rejected_points.len(), town.ground_truth.len() - 50);
    for r in &records {
        let (label, meta) = &want[&r.id];
        assert_eq!(r.label.value, *label);
        assert_eq!(r.metadata.values.len(), 34);
        for (a, b) in r.metadata.values.iter().zip(meta) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
        assert!(r.metadata.mask.iter().all(|m| !m));
    }
}

fn inside(ring: &[GeoPoint], p: GeoPoint) -> bool {
    let mut c = false;
    for k in 0..ring.len() {
        let (a, b) = (ring[k], ring[(k + 1) % ring.len()]);
        if (a.lat > p.lat) != (b.lat > p.lat)
            && p.lon < a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat)
        {
            c = !c;
        }
    }
    c
}

#[test]
fn small_build_drops_outside_point() {
    let town = synthetic::town(3, MetadataSchema::turkiye_s(), LabelScheme::S5, 2);
    let mut gt: Vec<_> = town.ground_truth[..3].to_vec();
    gt.push((gp(36.5, 36.5), 2));
    let (records, report) = build_dataset(
        town.footprints.clone(),
        &gt,
        &town.catalog,
        &town.scenes,
        &town.schema,
        town.scheme,
        &BuildOptions::default(),
    )
    .unwrap();
    assert_eq!(records.len(), 3);
    assert_eq!(report.rejected_points.len(), 1);
    assert_eq!(report.rejected_points[0].point_index, 3);
}

#[test]
fn serialised_dataset_is_byte_identical_and_round_trips() {
    let build = || {
        let town = synthetic::town(20, MetadataSchema::turkiye_s(), LabelScheme::S5, 4);
        let opts = BuildOptions {
            tile_size: 16,
            ..BuildOptions::default()
        };
        let (records, _) = build_dataset(
            town.footprints,
            &town.ground_truth,
            &town.catalog,
            &town.scenes,
            &town.schema,
            town.scheme,
            &opts,
        )
        .unwrap();
        Dataset::finalize(town.schema, town.scheme, opts, records, 0.85, 9).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ds = build();
    ds.save(a.path()).unwrap();
    build().save(b.path()).unwrap();
    assert_eq!(dataset_hash(a.path()).unwrap(), dataset_hash(b.path()).unwrap());
    for r in &ds.records {
        for sub in ["tiles", "masks"] {
            let f = format!("{sub}/{}.png", r.id);
            assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap());
        }
    }
    let back = Dataset::load(a.path()).unwrap();
    assert_eq!(back.split, ds.split);
    assert_eq!(back.normalizer, ds.normalizer);
    assert_eq!(back.records.len(), ds.records.len());
    for (x, y) in back.records.iter().zip(&ds.records) {
        assert_eq!(x.tile, y.tile);
        assert_eq!(x.label, y.label);
        assert_eq!(x.metadata, y.metadata);
        assert_eq!(x.footprint, y.footprint);
        assert_eq!(x.centroid, y.centroid);
    }
}

#[test]
fn stratification_within_two_points_on_10k() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let probs = [0.55, 0.25, 0.15, 0.04, 0.01];
    let items: Vec<(FootprintId, usize)> = (0..10_000u64)
        .map(|i| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let class = probs.iter().position(|p| {
                acc += p;
                u < acc
            });
            (FootprintId::from(i), class.unwrap_or(4))
        })
        .collect();
    let s = split_random(&items, 5, 0.85, 17).unwrap();
    assert_eq!(s.train.len(), 8500);
    let class_of: BTreeMap<_, _> = items.iter().cloned().collect();
    for c in 0..5 {
        let full = items.iter().filter(|(_, k)| *k == c).count() as f64 / items.len() as f64;
        let train = s.train.iter().filter(|id| class_of[*id] == c).count() as f64 / s.train.len() as f64;
        assert!((full - train).abs() < 0.02, "class {c}: {full} vs {train}");
    }
}

fn record_at(id: u64, p: GeoPoint, label: u8) -> BuildingRecord {
    let d = 1e-5;
    BuildingRecord {
        id: FootprintId::from(id),
        footprint: Footprint::new(
            id,
            vec![gp(p.lon - d, p.lat - d), gp(p.lon + d, p.lat - d), gp(p.lon + d, p.lat + d), gp(p.lon - d, p.lat + d)],
            None,
        )
        .unwrap(),
        centroid: p,
        tile: ImageTile::new(1, 1, vec![0, 0, 0], vec![true]).unwrap(),
        metadata: MetadataVector::unmasked(vec![]),
        label: LabelScheme::S5.label(label as i64).unwrap(),
        region: None,
    }
}

#[test]
fn region_split_matches_containment_counts() {
    let rects = [
        ("KAH", 36.0, 37.0, 36.5, 37.5),
        ("ADI", 36.5, 37.0, 37.0, 37.5),
        ("OSM", 36.0, 37.5, 36.5, 38.0),
        ("MAL", 36.7, 37.6, 37.0, 38.0),
    ];
    let regions: Vec<(String, Footprint)> = rects
        .iter()
        .map(|(n, w, s, e, no)| {
            (
                n.to_string(),
                Footprint::new(*n, vec![gp(*w, *s), gp(*e, *s), gp(*e, *no), gp(*w, *no)], None).unwrap(),
            )
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let records: Vec<_> = (0..500)
        .map(|i| record_at(i, gp(rng.gen_range(35.9..37.1), rng.gen_range(36.9..38.1)), 0))
        .collect();
    let split = split_by_region(&records, &regions);
    let mut unassigned = 0;
    let mut counts = BTreeMap::new();
    for r in &records {
        let p = r.centroid;
        match rects.iter().find(|(_, w, s, e, n)| p.lon >= *w && p.lon <= *e && p.lat >= *s && p.lat <= *n) {
            Some((name, ..)) => *counts.entry(name.to_string()).or_insert(0) += 1,
            None => unassigned += 1,
        }
    }
    for (name, ids) in &split.regions {
        assert_eq!(ids.len(), counts.get(name).copied().unwrap_or(0), "{name}");
    }
    assert_eq!(split.unassigned.len(), unassigned);
}

#[test]
fn normalisation_moments_on_1000_by_10() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let records: Vec<BuildingRecord> = (0..1000)
        .map(|i| {
            let mut r = record_at(i, gp(37.0, 37.0), 0);
            r.metadata = MetadataVector::unmasked(
                (0..10).map(|j| rng.gen_range(-1.0..1.0) * (j as f64 + 1.0) * 30.0 + j as f64 * 100.0).collect(),
            );
            r
        })
        .collect();
    let n = Normalizer::fit(&records, "h").unwrap();
    let z: Vec<Vec<f64>> = records.iter().map(|r| n.apply_metadata(&r.metadata).values).collect();
    for j in 0..10 {
        let mean = z.iter().map(|r| r[j]).sum::<f64>() / 1000.0;
        let std = (z.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 1000.0).sqrt();
        assert!(mean.abs() < 1e-10, "{mean}");
        assert!((std - 1.0).abs() < 1e-10, "{std}");
    }
    // Refitting on the normalised set gives the identity transform.
    let normed: Vec<BuildingRecord> = records
        .iter()
        .zip(&z)
        .map(|(r, v)| BuildingRecord {
            metadata: MetadataVector::unmasked(v.clone()),
            ..r.clone()
        })
        .collect();
    let again = Normalizer::fit(&normed, "h").unwrap();
    for j in 0..10 {
        assert!(again.meta_mean[j].abs() < 1e-10);
        assert!((again.meta_std[j] - 1.0).abs() < 1e-10);
    }
}

proptest! {
    #[test]
    fn splits_are_partitions(labels in proptest::collection::vec(0usize..4, 1..200),
                             fraction in 0.05..0.95f64, seed in any::<u64>()) {
        let items: Vec<_> = labels.iter().enumerate().map(|(i, &c)| (FootprintId::from(i as u64), c)).collect();
        let s = split_random(&items, 4, fraction, seed).unwrap();
        let mut all: Vec<_> = s.train.iter().chain(&s.test).cloned().collect();
        all.sort();
        let mut want: Vec<_> = items.iter().map(|(id, _)| id.clone()).collect();
        want.sort();
        prop_assert_eq!(all.len(), want.len());
        prop_assert_eq!(all, want);
        for c in 0..4 {
            let n = labels.iter().filter(|&&l| l == c).count();
            if n >= 2 {
                let tr = items.iter().filter(|(id, k)| *k == c && s.train.contains(id)).count();
                prop_assert!(tr >= 1 && tr < n);
            }
        }
    }

    #[test]
    fn class_weights_conserve_total(counts in proptest::collection::vec(1usize..10_000, 2..6)) {
        let w = class_weights_from_counts(&counts).unwrap();
        let total: usize = counts.iter().sum();
        let s: f64 = w.iter().zip(&counts).map(|(w, &n)| w * n as f64).sum();
        prop_assert!((s - total as f64).abs() <= 1e-9 * total as f64);
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n.min(50))).collect();
        prop_assert!(class_weights(&labels, counts.len()).is_ok());
    }
}
