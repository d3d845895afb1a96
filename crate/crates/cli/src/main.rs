//! `csiforge` command-line front-end.

mod manifest;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use csiforge::binio::{write_atomic, FormatError};
use csiforge::channel::{ArrayConfig, OfdmConfig};
use csiforge::dataset::{self, build_dataset, load_dataset, save_dataset, Dataset, GridSpec, SplitIndex, SplitMode};
use csiforge::features::{CacheStatus, FeatureCache, FeatureConfig, FeatureSet};
use csiforge::geometry::{load_environment, EnvironmentMap, Point2, Point3, Rect};
use csiforge::learn::train::{evaluate_nmse, prepare, train_prepared};
use csiforge::learn::{self, load_checkpoint, save_checkpoint, AdamWConfig, Metrics, ModelRegistry, ModelSpec, NmseMode, TrainConfig};
use csiforge::raytrace::{paths_to_csv, trace_paths, TraceConfig, Tracer};

use manifest::ManifestBuilder;

#[derive(Parser)]
#[command(name = "csiforge", version, about = "Ray-traced CSI datasets and spatial CSI predictors")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Environment map utilities.
    #[command(subcommand)]
    Env(EnvCommand),
    /// Trace paths between two points and print them as CSV.
    Trace(TraceArgs),
    /// Build or split CSI datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Build (or reuse) the feature cache entry for a dataset.
    Featurize(FeaturizeArgs),
    /// Train a model and write a checkpoint plus per-epoch metrics.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Render metrics CSVs into an SVG learning-curve plot and an NMSE table.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum EnvCommand {
    /// Load and validate a map; prints wall and material counts.
    Validate { map: PathBuf },
}

fn parse_pair(s: &str) -> Result<Point2, String> {
    let v = parse_floats(s, 2)?;
    Ok(Point2::new(v[0], v[1]))
}

fn parse_triple(s: &str) -> Result<Point3, String> {
    let v = parse_floats(s, 3)?;
    Ok(Point3::new(v[0], v[1], v[2]))
}

fn parse_rect(s: &str) -> Result<Rect, String> {
    let v = parse_floats(s, 4)?;
    Ok(Rect::new(v[0], v[1], v[2], v[3]))
}

fn parse_floats(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got {}", v.len()));
    }
    Ok(v)
}

fn parse_array(s: &str) -> Result<(usize, usize), String> {
    let (h, v) = s.split_once('x').ok_or_else(|| format!("expected HxV, got `{s}`"))?;
    let p = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    Ok((p(h)?, p(v)?))
}

#[derive(Args)]
struct TraceArgs {
    map: PathBuf,
    #[arg(long, value_parser = parse_pair)]
    tx: Point2,
    #[arg(long, value_parser = parse_pair)]
    rx: Point2,
    #[arg(long, default_value_t = 2)]
    order: usize,
    #[arg(long, default_value_t = 2.4e9)]
    freq: f64,
    /// TX height; with --rx-height, walls no taller than both are ignored.
    #[arg(long, requires = "rx_height")]
    tx_height: Option<f64>,
    #[arg(long, requires = "tx_height")]
    rx_height: Option<f64>,
    /// Write the CSV here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Trace and synthesize CSI over a UE grid.
    Build(BuildArgs),
    /// Split a dataset into train / validation index sets.
    Split(SplitArgs),
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    map: PathBuf,
    /// UE region as xmin,ymin,xmax,ymax.
    #[arg(long, value_parser = parse_rect)]
    region: Rect,
    #[arg(long, default_value_t = 0.1)]
    spacing: f64,
    #[arg(long, default_value_t = 1.5)]
    ue_height: f64,
    /// Base-station position x,y,z.
    #[arg(long, value_parser = parse_triple)]
    bs: Point3,
    /// Planar array as HxV.
    #[arg(long, default_value = "4x4", value_parser = parse_array)]
    array: (usize, usize),
    /// Element spacing in wavelengths.
    #[arg(long, default_value_t = 0.5)]
    element_spacing: f64,
    /// Array boresight bearing, radians.
    #[arg(long, default_value_t = 0.0)]
    boresight: f64,
    #[arg(long, default_value_t = 16)]
    subcarriers: usize,
    #[arg(long, default_value_t = 30e3)]
    subcarrier_spacing: f64,
    #[arg(long, default_value_t = 2.4e9)]
    freq: f64,
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Drop paths weaker than this magnitude.
    #[arg(long, default_value_t = 0.0)]
    min_gain: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
    /// Also write the UE positions as CSV.
    #[arg(long)]
    positions: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    dataset: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    val_ratio: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "random")]
    mode: SplitMode,
    #[arg(short, long)]
    output: PathBuf,
}

/// Split file: index sets plus the hash of the dataset they index.
#[derive(Serialize, Deserialize)]
struct SplitFile {
    dataset_hash: String,
    mode: SplitMode,
    val_ratio: f64,
    seed: u64,
    #[serde(flatten)]
    split: SplitIndex,
}

#[derive(Args, Clone)]
struct FeatureArgs {
    #[arg(long, default_value_t = 5)]
    wall_k: usize,
    #[arg(long, default_value_t = 6)]
    pe_freqs: usize,
    #[arg(long, default_value_t = 33)]
    raster_size: usize,
    #[arg(long, default_value_t = 0.5)]
    raster_res: f64,
}

impl FeatureArgs {
    fn config(&self) -> FeatureConfig {
        FeatureConfig {
            wall_k: self.wall_k,
            pe_freqs: self.pe_freqs,
            raster_size: self.raster_size,
            raster_res: self.raster_res,
        }
    }
}

#[derive(Args)]
struct CacheArgs {
    /// Feature cache directory (overridden by CSIFORGE_CACHE_DIR).
    #[arg(long, default_value = ".csiforge-cache")]
    cache_dir: PathBuf,
}

impl CacheArgs {
    fn cache(&self) -> FeatureCache {
        FeatureCache::from_env_or(&self.cache_dir)
    }
}

#[derive(Args)]
struct FeaturizeArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    cache: CacheArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum NmseFlag {
    Mean,
    Sum,
}

impl From<NmseFlag> for NmseMode {
    fn from(f: NmseFlag) -> Self {
        match f {
            NmseFlag::Mean => NmseMode::MeanOfRatios,
            NmseFlag::Sum => NmseMode::RatioOfSums,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Registered model name.
    #[arg(long)]
    model: String,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    cache: CacheArgs,
    /// Disable the raster conv extractor.
    #[arg(long)]
    no_conv: bool,
    /// Hidden widths, comma-separated (model default if omitted).
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    kl_weight: Option<f64>,
    #[arg(long, default_value_t = 120)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 30)]
    patience: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, default_value = "mean")]
    nmse: NmseFlag,
    /// Checkpoint output path.
    #[arg(short, long)]
    output: PathBuf,
    /// Metrics CSV output path.
    #[arg(long)]
    metrics: PathBuf,
    /// Proceed even if the split was made for a different dataset.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Subset {
    All,
    Train,
    Val,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Restrict scoring to one side of a split.
    #[arg(long, requires = "subset")]
    split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    subset: Subset,
    #[command(flatten)]
    cache: CacheArgs,
    #[arg(long, value_enum, default_value = "mean")]
    nmse: NmseFlag,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Metrics CSVs as NAME=PATH, one per model.
    #[arg(long = "metrics", required = true, value_parser = parse_named)]
    metrics: Vec<(String, PathBuf)>,
    #[arg(long)]
    svg: PathBuf,
    /// Markdown table output.
    #[arg(long)]
    table: PathBuf,
    /// Same table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Table row stride in epochs.
    #[arg(long, default_value_t = 10)]
    every: usize,
}

fn parse_named(s: &str) -> Result<(String, PathBuf), String> {
    let (n, p) = s.split_once('=').ok_or_else(|| format!("expected NAME=PATH, got `{s}`"))?;
    Ok((n.to_string(), PathBuf::from(p)))
}

/// Marks errors that indicate a broken internal invariant (exit code 3).
#[derive(Debug, thiserror::Error)]
#[error("internal error: {0}")]
struct Internal(String);

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Internal>() {
            return 3;
        }
        if cause.is::<std::io::Error>() || matches!(cause.downcast_ref::<FormatError>(), Some(FormatError::Io { .. })) {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {}", Internal(e.to_string()));
            return ExitCode::from(3);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Env(EnvCommand::Validate { map }) => env_validate(&map),
        Command::Trace(a) => trace(&a),
        Command::Dataset(DatasetCommand::Build(a)) => dataset_build(&a),
        Command::Dataset(DatasetCommand::Split(a)) => dataset_split(&a),
        Command::Featurize(a) => featurize(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Report(a) => report(&a),
    }
}

fn load_map(path: &Path) -> Result<EnvironmentMap> {
    Ok(load_environment(path)?)
}

fn env_validate(path: &Path) -> Result<()> {
    let map = load_map(path)?;
    println!("map: {}", path.display());
    println!("walls: {}", map.walls().len());
    println!("materials: {}", map.materials().len());
    println!("hash: {}", map.content_hash());
    Ok(())
}

fn trace(a: &TraceArgs) -> Result<()> {
    let map = load_map(&a.map)?;
    let cfg = TraceConfig {
        max_reflection_order: a.order,
        carrier_frequency: a.freq,
        ..TraceConfig::default()
    };
    let paths = match (a.tx_height, a.rx_height) {
        (Some(th), Some(rh)) => Tracer::with_heights(&map, cfg, a.tx, th, rh)?.trace(a.rx),
        _ => trace_paths(&map, a.tx, a.rx, &cfg)?,
    };
    let csv = paths_to_csv(&paths);
    match &a.output {
        Some(p) => write_atomic(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn dataset_build(a: &BuildArgs) -> Result<()> {
    let start = Instant::now();
    let map = load_map(&a.map)?;
    let grid = GridSpec {
        region: a.region,
        spacing: a.spacing,
        ue_height: a.ue_height,
        bs_position: a.bs,
    };
    let array = ArrayConfig {
        n_h: a.array.0,
        n_v: a.array.1,
        spacing: a.element_spacing,
        boresight: a.boresight,
    };
    let ofdm = OfdmConfig {
        carrier_frequency: a.freq,
        subcarrier_spacing: a.subcarrier_spacing,
        num_subcarriers: a.subcarriers,
        ..OfdmConfig::default()
    };
    let trace_cfg = TraceConfig {
        max_reflection_order: a.order,
        carrier_frequency: a.freq,
        min_path_gain: a.min_gain,
    };
    let ds = build_dataset(&map, &grid, &array, &ofdm, &trace_cfg, a.seed)?;
    save_dataset(&ds, &a.output)?;
    let mut outputs = vec![a.output.as_path()];
    if let Some(p) = &a.positions {
        write_atomic(p, dataset::positions_csv(&ds).as_bytes())?;
        outputs.push(p);
    }
    let mut m = ManifestBuilder::new(&(&grid, &array, &ofdm, &trace_cfg), Some(a.seed));
    m.input(&a.map)?;
    let repro = m.write(&outputs, start.elapsed())?;
    println!("samples: {}", ds.len());
    println!("normalization: {:e}", ds.meta.normalization);
    println!("hash: {}", ds.content_hash());
    if repro {
        println!("reproduction: matches previous run inputs");
    }
    Ok(())
}

fn dataset_split(a: &SplitArgs) -> Result<()> {
    let start = Instant::now();
    let ds = load_dataset(&a.dataset)?;
    let split = dataset::split(&ds, a.val_ratio, a.seed, a.mode)?;
    let file = SplitFile {
        dataset_hash: ds.content_hash(),
        mode: a.mode,
        val_ratio: a.val_ratio,
        seed: a.seed,
        split,
    };
    let mut json = serde_json::to_vec_pretty(&file)?;
    json.push(b'\n');
    write_atomic(&a.output, &json)?;
    let mut m = ManifestBuilder::new(&(a.val_ratio, a.seed, a.mode), Some(a.seed));
    m.input(&a.dataset)?;
    m.write(&[&a.output], start.elapsed())?;
    println!("train: {}", file.split.train_ids.len());
    println!("val: {}", file.split.val_ids.len());
    Ok(())
}

fn load_split(path: &Path, ds: &Dataset, force: bool) -> Result<SplitIndex> {
    let bytes = std::fs::read(path).with_context(|| format!("reading split {}", path.display()))?;
    let file: SplitFile = serde_json::from_slice(&bytes).with_context(|| format!("parsing split {}", path.display()))?;
    let hash = ds.content_hash();
    if file.dataset_hash != hash {
        if !force {
            bail!(
                "split {} was made for dataset {} but the given dataset hashes to {}; rerun `dataset split` or pass --force",
                path.display(),
                file.dataset_hash,
                hash
            );
        }
        log::warn!("split/dataset hash mismatch overridden by --force");
    }
    Ok(file.split)
}

fn cached_features(map: &EnvironmentMap, ds: &Dataset, cfg: &FeatureConfig, cache: &FeatureCache) -> Result<(FeatureSet, CacheStatus)> {
    Ok(cache.get_or_build(map, ds, cfg)?)
}

fn featurize(a: &FeaturizeArgs) -> Result<()> {
    let start = Instant::now();
    let map = load_map(&a.map)?;
    let ds = load_dataset(&a.dataset)?;
    let cache = a.cache.cache();
    let cfg = a.features.config();
    let (set, status) = cached_features(&map, &ds, &cfg, &cache)?;
    let entry = cache.entry_path(&set.key);
    let mut m = ManifestBuilder::new(&cfg, None);
    m.input(&a.map)?;
    m.input(&a.dataset)?;
    m.write(&[&entry], start.elapsed())?;
    let status = match status {
        CacheStatus::Hit => "hit",
        CacheStatus::Built => "built",
        CacheStatus::Rebuilt => "rebuilt",
    };
    println!("cache: {status}");
    println!("records: {}", set.records.len());
    println!("entry: {}", entry.display());
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let start = Instant::now();
    let map = load_map(&a.map)?;
    let ds = load_dataset(&a.dataset)?;
    let split = load_split(&a.split, &ds, a.force)?;
    let cache = a.cache.cache();
    let (set, status) = cached_features(&map, &ds, &a.features.config(), &cache)?;
    log::info!("features: {status:?}");

    let registry = ModelRegistry::with_builtins();
    let mut spec = ModelSpec::for_kind(&a.model, &set.meta).map_err(|_| learn::LearnError::UnknownModel {
        name: a.model.clone(),
        known: registry.names().join(", "),
    })?;
    if a.no_conv {
        spec.conv = None;
    }
    if let Some(h) = &a.hidden {
        spec.hidden = h.clone();
    }
    if let Some(l) = a.latent_dim {
        spec.latent_dim = l;
    }
    if let Some(b) = a.kl_weight {
        spec.kl_weight = b;
    }
    let model = registry.build(spec)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        optimizer: AdamWConfig {
            lr: a.lr,
            weight_decay: a.weight_decay,
            ..AdamWConfig::default()
        },
        seed: a.seed,
        patience: a.patience,
        nmse_mode: a.nmse.into(),
    };
    let data = prepare(model.as_ref(), &set)?;
    let out = train_prepared(model.as_ref(), &data, &split, &cfg)?;
    save_checkpoint(&a.output, model.spec(), &out.params)?;
    write_atomic(&a.metrics, out.metrics.to_csv().as_bytes())?;

    let mut m = ManifestBuilder::new(&(model.spec(), &cfg), Some(a.seed));
    m.input(&a.map)?;
    m.input(&a.dataset)?;
    m.input(&a.split)?;
    let repro = m.write(&[&a.output, &a.metrics], start.elapsed())?;
    let best = out
        .metrics
        .best()
        .ok_or_else(|| Internal("training returned no metrics".into()))?;
    println!("model: {} ({} parameters)", model.spec().kind, out.params.num_scalars());
    println!("epochs: {}", out.metrics.epochs.len());
    println!("best epoch: {}", best.epoch);
    println!("best val nmse: {:.6} ({:.2} dB)", best.val_nmse, learn::loss::nmse_db(best.val_nmse));
    if repro {
        println!("reproduction: matches previous run inputs");
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let registry = ModelRegistry::with_builtins();
    let (model, params) = load_checkpoint(&a.checkpoint, &registry)?;
    let map = load_map(&a.map)?;
    let ds = load_dataset(&a.dataset)?;
    let (set, _) = cached_features(&map, &ds, &model.spec().features, &a.cache.cache())?;
    let data = prepare(model.as_ref(), &set).context("checkpoint does not fit this dataset")?;
    let ids: Vec<usize> = match &a.split {
        Some(p) => {
            let split = load_split(p, &ds, a.force)?;
            match a.subset {
                Subset::Train => split.train_ids,
                Subset::Val => split.val_ids,
                Subset::All => (0..ds.len()).collect(),
            }
        }
        None => (0..ds.len()).collect(),
    };
    let nmse = evaluate_nmse(model.as_ref(), &params, &data, &ids, a.nmse.into())?;
    println!("model: {}", model.spec().kind);
    println!("samples: {}", ids.len());
    println!("nmse: {nmse:.6}");
    println!("nmse_db: {:.3}", learn::loss::nmse_db(nmse));
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let start = Instant::now();
    let mut series = Vec::new();
    let mut m = ManifestBuilder::new(&(a.every, a.metrics.iter().map(|(n, _)| n).collect::<Vec<_>>()), None);
    for (name, path) in &a.metrics {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading metrics {}", path.display()))?;
        let metrics = Metrics::from_csv(&text).with_context(|| format!("parsing {}", path.display()))?;
        if metrics.epochs.is_empty() {
            return Err(anyhow!("metrics file {} has no epochs", path.display()));
        }
        m.input(path)?;
        series.push(report::Series {
            name: name.clone(),
            metrics,
        });
    }
    write_atomic(&a.svg, report::learning_curves_svg(&series).as_bytes())?;
    write_atomic(&a.table, report::nmse_table_markdown(&series, a.every).as_bytes())?;
    let mut outputs = vec![a.table.as_path(), a.svg.as_path()];
    if let Some(p) = &a.csv {
        write_atomic(p, report::nmse_table_csv(&series, a.every).as_bytes())?;
        outputs.push(p);
    }
    m.write(&outputs, start.elapsed())?;
    print!("{}", report::nmse_table_markdown(&series, a.every));
    Ok(())
}
