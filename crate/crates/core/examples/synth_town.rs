//! Writes a synthetic town as raw build inputs plus a matching `build.json`.
//!
//! cargo run -p quake-pda-core --example synth_town -- <dir> [buildings] [seed]

use std::path::PathBuf;

use quake_pda::dataset::{BuildOptions, LabelScheme, MetadataSchema};
use quake_pda::experiment::{BuildConfig, SchemaChoice};
use quake_pda::synthetic;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().ok_or("usage: synth_town <dir> [buildings] [seed]")?);
    let n: usize = args.next().map_or(Ok(120), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse())?;

    let town = synthetic::town(n, MetadataSchema::turkiye_s(), LabelScheme::S5, seed);
    synthetic::write_raw(&town, &dir)?;
    let cfg = BuildConfig {
        footprints: dir.join("footprints.geojson"),
        ground_truth: dir.join("ground_truth.csv"),
        fields: dir.join("fields"),
        scenes: dir.join("scenes"),
        schema: SchemaChoice::Named("turkiye_s".into()),
        scheme: LabelScheme::S5,
        options: BuildOptions {
            tile_size: 16,
            ..BuildOptions::default()
        },
        seed,
        ..BuildConfig::default()
    };
    std::fs::write(dir.join("build.json"), serde_json::to_string_pretty(&cfg)?)?;
    println!("{}", dir.join("build.json").display());
    Ok(())
}
