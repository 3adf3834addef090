use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use quake_pda::attribution::SamplingConfig;
use quake_pda::dataset::LabelScheme;
use quake_pda::experiment::{
    build_and_save, evaluate_checkpoint, explain, load_config, report, run_experiment, BuildConfig, EvalSplit,
    ExperimentConfig, ExperimentError, ExplainOptions, MaskChoice, RecordSelection, RegionGrid, SchemaChoice,
    TrainScope,
};
use quake_pda::geo::{Hemisphere, UtmZone};
use quake_pda::metrics::MetricsReport;
use quake_pda::model::EmbeddingVariant;
use serde_json::{json, Value};

const THREADS_ENV: &str = "QUAKE_PDA_THREADS";

#[derive(Parser)]
#[command(name = "quake-pda", version, about = "Building-level post-earthquake damage assessment")]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Join ground truth to footprints, sample fields, crop tiles, split and save.
    BuildDataset(BuildArgs),
    /// Train a model and evaluate it under the configured mask.
    Train(TrainArgs),
    /// Evaluate a checkpoint, optionally with metadata masked.
    Evaluate(EvalArgs),
    /// Shapley attributions for selected records.
    Explain(ExplainArgs),
    /// Train on some regions, score every test region.
    Generalize(GeneralizeArgs),
    /// Comparison tables from run directories.
    Report(ReportArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// JSON build config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    footprints: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Directory of raster and contour fields.
    #[arg(long)]
    fields: Option<PathBuf>,
    /// Directory of PNG scenes with JSON sidecars.
    #[arg(long)]
    scenes: Option<PathBuf>,
    /// turkiye_l or turkiye_s.
    #[arg(long)]
    schema: Option<String>,
    #[arg(long, value_enum)]
    scheme: Option<Scheme>,
    #[arg(long)]
    zone: Option<u8>,
    /// Southern-hemisphere zone.
    #[arg(long)]
    south: bool,
    #[arg(long)]
    tile_size: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    L4,
    S5,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Mlp,
    ResNorm,
    DeepMlp,
    DeepResNorm,
    TransformerEnc,
    LargeTransformerEnc,
    /// Image-only model.
    None,
}

impl From<Variant> for EmbeddingVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Mlp => EmbeddingVariant::Mlp,
            Variant::ResNorm => EmbeddingVariant::ResNorm,
            Variant::DeepMlp => EmbeddingVariant::DeepMlp,
            Variant::DeepResNorm => EmbeddingVariant::DeepResNorm,
            Variant::TransformerEnc => EmbeddingVariant::TransformerEnc,
            Variant::LargeTransformerEnc => EmbeddingVariant::LargeTransformerEnc,
            Variant::None => EmbeddingVariant::None,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config or a run manifest; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Root under which the run directory `<name>` is created.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// NONE, ALL, SAR or a comma-separated feature list.
    #[arg(long)]
    mask: Option<String>,
    #[arg(long, value_enum)]
    variant: Option<Variant>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct GeneralizeArgs {
    #[command(flatten)]
    run: RunArgs,
    /// GeoJSON of named region polygons; record region labels otherwise.
    #[arg(long)]
    regions: Option<PathBuf>,
    /// Comma-separated training regions.
    #[arg(long)]
    train_regions: Option<String>,
    /// Comma-separated test regions.
    #[arg(long)]
    test_regions: Option<String>,
    #[arg(long, value_enum)]
    scope: Option<Scope>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Regions,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Test,
    Train,
    All,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "NONE")]
    mask: String,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    /// Defaults to `eval_<mask>` beside the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// A count (first n test records) or comma-separated ids.
    #[arg(long, default_value = "10")]
    records: String,
    /// Enumerate every coalition (at most 15 groups).
    #[arg(long)]
    exact: bool,
    /// Permutations per record when sampling.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Background records drawn from the train split.
    #[arg(long, default_value_t = 32)]
    background: usize,
    /// One background record per permutation pair instead of the whole set.
    #[arg(long)]
    single_draw: bool,
    #[arg(long, default_value = "NONE")]
    mask: String,
    /// Defaults to `explain` beside the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Name of the reference run for the comparison table.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

fn parse_mask(s: &str) -> Result<MaskChoice> {
    MaskChoice::parse(s).map_err(anyhow::Error::msg)
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()
}

/// Loads the config (if any) and applies flag overrides. Returns the pinned
/// dataset hash of a manifest unless the dataset was overridden.
fn resolve_run(a: &RunArgs) -> Result<(ExperimentConfig, Option<String>)> {
    let (mut cfg, mut pin) = match &a.config {
        Some(p) => load_config(p).with_context(|| format!("reading {}", p.display()))?,
        None => (ExperimentConfig::default(), None),
    };
    if let Some(d) = &a.dataset {
        cfg.dataset = d.clone();
        pin = None;
    }
    if let Some(n) = &a.name {
        cfg.name = n.clone();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.base_lr = lr;
    }
    if let Some(m) = &a.mask {
        cfg.mask = parse_mask(m)?;
    }
    if let Some(v) = a.variant {
        cfg.model.embedding_variant = v.into();
    }
    Ok((cfg, pin))
}

fn headline(m: &MetricsReport) -> Value {
    json!({
        "accuracy": m.accuracy,
        "precision": m.macro_precision,
        "recall": m.macro_recall,
        "f1": m.macro_f1,
        "auc_roc": m.macro_auc,
        "n": m.n_samples,
    })
}

fn run(cfg: ExperimentConfig, pin: Option<String>, out: &Path) -> Result<Value> {
    let o = run_experiment(&cfg, out, pin.as_deref())?;
    let regions: Vec<Value> = o
        .regions
        .iter()
        .map(|r| json!({"region": r.region, "seen": r.seen, "n": r.n, "metrics": r.metrics.as_ref().map(headline)}))
        .collect();
    Ok(json!({
        "run_dir": o.dir,
        "best_epoch": o.manifest.best_epoch,
        "checkpoint_sha256": o.manifest.checkpoint_sha256,
        "metrics": o.metrics.as_ref().map(headline),
        "regions": regions,
    }))
}

fn build(a: &BuildArgs) -> Result<Value> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => BuildConfig::default(),
    };
    let set = |slot: &mut PathBuf, v: &Option<PathBuf>| {
        if let Some(v) = v {
            *slot = v.clone();
        }
    };
    set(&mut cfg.footprints, &a.footprints);
    set(&mut cfg.ground_truth, &a.ground_truth);
    set(&mut cfg.fields, &a.fields);
    set(&mut cfg.scenes, &a.scenes);
    if let Some(s) = &a.schema {
        cfg.schema = SchemaChoice::Named(s.clone());
    }
    if let Some(s) = a.scheme {
        cfg.scheme = match s {
            Scheme::L4 => LabelScheme::L4,
            Scheme::S5 => LabelScheme::S5,
        };
    }
    if let Some(z) = a.zone {
        cfg.options.zone = UtmZone::new(z, if a.south { Hemisphere::South } else { Hemisphere::North })?;
    }
    if let Some(t) = a.tile_size {
        cfg.options.tile_size = t;
    }
    if let Some(m) = a.margin {
        cfg.options.margin = m;
    }
    if let Some(f) = a.train_fraction {
        cfg.train_fraction = f;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    for (name, p) in [
        ("footprints", &cfg.footprints),
        ("ground_truth", &cfg.ground_truth),
        ("fields", &cfg.fields),
        ("scenes", &cfg.scenes),
    ] {
        if p.as_os_str().is_empty() {
            bail!("missing input: {name}");
        }
    }
    let (ds, rep) = build_and_save(&cfg, &a.out)?;
    Ok(json!({
        "dataset_dir": a.out,
        "records": ds.records.len(),
        "train": ds.train_records().len(),
        "test": ds.test_records().len(),
        "rejected_points": rep.rejected_points.len(),
        "dropped_buildings": rep.dropped.len(),
    }))
}

fn beside(checkpoint: &Path, leaf: &str) -> PathBuf {
    checkpoint.parent().unwrap_or(Path::new(".")).join(leaf)
}

fn dispatch(cmd: &Command) -> Result<Value> {
    match cmd {
        Command::BuildDataset(a) => build(a),
        Command::Train(a) => {
            let (cfg, pin) = resolve_run(&a.run)?;
            run(cfg, pin, &a.run.out)
        }
        Command::Generalize(a) => {
            let (mut cfg, pin) = resolve_run(&a.run)?;
            let mut grid = cfg.regions.take().unwrap_or_default();
            if let Some(p) = &a.regions {
                grid.polygons = Some(p.clone());
            }
            if let Some(t) = &a.train_regions {
                grid.train = split_list(t);
            }
            if let Some(t) = &a.test_regions {
                grid.test = split_list(t);
            }
            if let Some(s) = a.scope {
                grid.scope = match s {
                    Scope::Regions => TrainScope::Regions,
                    Scope::Full => TrainScope::Full,
                };
            }
            if grid == RegionGrid::default() {
                bail!("generalize needs --train-regions and --test-regions (or regions in the config)");
            }
            cfg.regions = Some(grid);
            run(cfg, pin, &a.run.out)
        }
        Command::Evaluate(a) => {
            let mask = parse_mask(&a.mask)?;
            let out = a.out.clone().unwrap_or_else(|| beside(&a.checkpoint, &format!("eval_{}", mask.label())));
            let split = match a.split {
                Split::Test => EvalSplit::Test,
                Split::Train => EvalSplit::Train,
                Split::All => EvalSplit::All,
            };
            let m = evaluate_checkpoint(&a.checkpoint, &a.dataset, &mask, split, &out)?;
            Ok(json!({"out": out, "metrics": headline(&m)}))
        }
        Command::Explain(a) => {
            let opts = ExplainOptions {
                exact: a.exact,
                sampling: SamplingConfig {
                    sample_count: a.samples,
                    seed: a.seed,
                    full_background: !a.single_draw,
                },
                background: a.background,
                background_seed: a.seed,
                mask: parse_mask(&a.mask)?,
            };
            let out = a.out.clone().unwrap_or_else(|| beside(&a.checkpoint, "explain"));
            let o = explain(&a.checkpoint, &a.dataset, &RecordSelection::parse(&a.records), &opts, &out)?;
            let ranking: Vec<Value> = o
                .summaries
                .iter()
                .map(|s| json!({"class": s.class, "top": s.ranking.iter().take(5).map(|r| &r.feature).collect::<Vec<_>>()}))
                .collect();
            Ok(json!({"out": out, "records": o.records.len(), "ranking": ranking}))
        }
        Command::Report(a) => {
            let r = report(&a.runs, a.baseline.as_deref(), &a.out)?;
            let absent: Vec<&str> = r.rows.iter().filter(|r| r.values.is_none()).map(|r| r.run.as_str()).collect();
            Ok(json!({
                "out": a.out,
                "rows": r.rows.len(),
                "comparisons": r.comparisons.len(),
                "deltas": r.deltas.len(),
                "absent": absent,
            }))
        }
    }
}

/// `QUAKE_PDA_THREADS` if set, else `default` (0 = all cores).
fn init_threads(default: usize) -> Result<()> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count"))?,
        Err(_) => default,
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn error_json(e: &anyhow::Error) -> Value {
    let kind = e.downcast_ref::<ExperimentError>().map_or("error", ExperimentError::kind);
    let chain: Vec<String> = e.chain().skip(1).map(ToString::to_string).collect();
    json!({"error": kind, "message": e.to_string(), "causes": chain})
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({"error": "usage", "message": e.to_string().trim_end()}));
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    // Training defaults to one worker; everything else may use every core.
    let default_threads = match cli.command {
        Command::Train(_) | Command::Generalize(_) => 1,
        _ => 0,
    };
    let result = init_threads(default_threads).and_then(|()| dispatch(&cli.command));
    match result {
        Ok(v) => {
            // A closed pipe on stdout is not a failure of the command.
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
