//! The `sinr` command line: training, evaluation, point prediction and
//! raster export.
//!
//! Exit codes: 0 on success, 1 when a command fails at run time, 2 for
//! usage errors. `SINR_THREADS` caps the worker pool used for evaluation.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::data::{
    filter_min_count, input_dim, load_env_rasters, load_observations, EnvGrid, EnvRasterStack,
    ObservationSet, SamplerConfig,
};
use crate::eval::{
    f1_max_threshold, geo_feature_task, geo_prior_delta, map_task, ClassifierScoreSet, EvalGrid,
    GridBaselineMode, GridBaselineModel, ModelPredictor, Predictor, RIDGE_ALPHAS,
};
use crate::geo::{GeoCoord, GridSpec, InputMode};
use crate::losses::{LossConfig, LossVariant, DEFAULT_LAMBDA};
use crate::net::{NetConfig, SinrModel};
use crate::rng::rng_from_seed;
use crate::train::{TrainConfig, Trainer};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "sinr",
    version,
    about = "Species range maps from presence-only observations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on an observation CSV.
    Train(TrainArgs),
    /// Score a model or baseline.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Predict presence probabilities at given locations.
    Predict(PredictArgs),
    /// Render one species' predicted range on a global grid.
    ExportRaster(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderArg {
    /// Residual MLP location encoder.
    Sinr,
    /// Logistic regression on the encoded input.
    Lr,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Observation CSV with species_id,lon,lat columns.
    #[arg(long)]
    pub obs: PathBuf,
    #[arg(long, default_value = "an-full")]
    pub loss: LossVariant,
    /// Weight of the positive term in the full losses.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2048)]
    pub batch_size: usize,
    /// Initial learning rate, decayed by 0.98 per epoch.
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    /// Keep at most this many records per species.
    #[arg(long)]
    pub cap_per_species: Option<usize>,
    /// Drop species with fewer records than this (applied before the cap).
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long, default_value = "coords")]
    pub input: InputMode,
    /// ENVGRID raster files, in input order.
    #[arg(long, num_args = 1..)]
    pub env_raster: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = EncoderArg::Sinr)]
    pub encoder: EncoderArg,
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f32,
    /// Model file to write; the run manifest goes next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path (default: `<out>.manifest`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Write a resumable checkpoint here after every epoch.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint written with the same flags.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

/// Which predictor an evaluation scores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Baseline {
    /// The model given with `--model`.
    None,
    /// Logistic regression trained on `--obs` with default settings.
    Lr,
    /// Per-cell observation counts from `--obs` at this grid resolution.
    Grid(usize),
}

impl std::str::FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Baseline::None),
            "lr" => Ok(Baseline::Lr),
            _ => match s.strip_prefix("grid:").map(str::parse::<usize>) {
                Some(Ok(r)) if r > 0 => Ok(Baseline::Grid(r)),
                _ => Err(format!("expected none, lr or grid:RES, got `{s}`")),
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct PredictorArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Score a baseline instead of `--model`: none, lr or grid:RES.
    #[arg(long, default_value = "none")]
    pub baseline: Baseline,
    /// Observations the baselines are fitted on.
    #[arg(long)]
    pub obs: Option<PathBuf>,
    /// Rasters the model's inputs need, in training order.
    #[arg(long, num_args = 1..)]
    pub env_raster: Vec<PathBuf>,
    /// Seed for fitting the lr baseline.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the report CSV here instead of standard output.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Mean average precision against gridded presence/absence labels.
    Map {
        /// EVALGRID label file.
        #[arg(long)]
        grid: PathBuf,
        /// Also write every scored cell to this CSV.
        #[arg(long)]
        dump_cells: Option<PathBuf>,
        #[command(flatten)]
        predictor: PredictorArgs,
    },
    /// Change in classifier top-1 accuracy when weighted by the range prior.
    Geoprior {
        /// Classifier score CSV.
        #[arg(long)]
        scores: PathBuf,
        #[command(flatten)]
        predictor: PredictorArgs,
    },
    /// Ridge regression from location features to raster layers.
    Geofeature {
        /// ENVGRID target layers.
        #[arg(long, required = true, num_args = 1..)]
        target_raster: Vec<PathBuf>,
        /// Fraction of cells held out for testing.
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[command(flatten)]
        predictor: PredictorArgs,
    },
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with lon,lat columns.
    #[arg(long, conflicts_with_all = ["lon", "lat"])]
    pub coords: Option<PathBuf>,
    #[arg(long, requires = "lat", allow_hyphen_values = true)]
    pub lon: Option<f64>,
    #[arg(long, requires = "lon", allow_hyphen_values = true)]
    pub lat: Option<f64>,
    /// Only output this species.
    #[arg(long)]
    pub species: Option<String>,
    #[arg(long, num_args = 1..)]
    pub env_raster: Vec<PathBuf>,
    /// Output CSV (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// How to turn scores into a presence map.
#[derive(Debug, Clone, PartialEq)]
pub enum BinaryThreshold {
    /// The F1-maximizing threshold on this EVALGRID's labels.
    F1(PathBuf),
    Fixed(f64),
}

impl std::str::FromStr for BinaryThreshold {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Some(p) = s.strip_prefix("f1:") {
            return Ok(BinaryThreshold::F1(PathBuf::from(p)));
        }
        match s.strip_prefix("fixed:").map(str::parse::<f64>) {
            Some(Ok(t)) if (0.0..=1.0).contains(&t) => Ok(BinaryThreshold::Fixed(t)),
            _ => Err(format!(
                "expected f1:EVALGRID or fixed:F with F in [0, 1], got `{s}`"
            )),
        }
    }
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub species: String,
    /// Grid resolution: 2N columns by N rows.
    #[arg(long)]
    pub resolution: usize,
    #[arg(long)]
    pub binary_threshold: Option<BinaryThreshold>,
    #[arg(long, num_args = 1..)]
    pub env_raster: Vec<PathBuf>,
    /// Output prefix; writes `<out>.pgm` and `<out>.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

/// A failure mapped to an exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    configure_threads();
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("SINR_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(e) => cmd_eval(&e),
        Command::Predict(a) => cmd_predict(&a),
        Command::ExportRaster(a) => cmd_export_raster(&a),
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

fn load_env(paths: &[PathBuf], mode: InputMode) -> CliResult<Option<EnvRasterStack>> {
    match (mode.needs_env(), paths.is_empty()) {
        (true, true) => Err(CliError::Usage(format!(
            "--input {} needs at least one --env-raster",
            mode.as_str()
        ))),
        (true, false) => Ok(Some(load_env_rasters(paths)?)),
        (false, _) => Ok(None),
    }
}

fn load_obs(path: &Path) -> Result<ObservationSet> {
    let (set, rejected) = load_observations(path)?;
    for r in &rejected {
        eprintln!("{}:{}: skipped row: {}", path.display(), r.line, r.reason);
    }
    Ok(set)
}

fn train_config(a: &TrainArgs, n_species: usize, input_dim: usize) -> CliResult<TrainConfig> {
    let net = match a.encoder {
        EncoderArg::Sinr => NetConfig {
            hidden_dim: a.hidden,
            n_residual_layers: a.layers,
            dropout_p: a.dropout,
            ..NetConfig::new(input_dim, n_species)
        },
        EncoderArg::Lr => NetConfig::logistic_regression(input_dim, n_species),
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        initial_lr: a.lr,
        loss: LossConfig::new(a.loss, a.lambda).map_err(|e| CliError::Usage(e.to_string()))?,
        net,
        sampler: SamplerConfig {
            batch_size: a.batch_size,
            cap_per_species: a.cap_per_species,
            subsample_seed: a.seed,
            input_mode: a.input,
        },
        master_seed: a.seed,
        ..TrainConfig::new(NetConfig::new(input_dim, n_species))
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let start = Instant::now();
    let env = load_env(&a.env_raster, a.input)?;
    let mut obs = load_obs(&a.obs)?;
    if let Some(m) = a.min_count {
        obs = filter_min_count(&obs, m);
    }
    if obs.is_empty() {
        return Err(Error::Empty(format!("no usable records in {}", a.obs.display())).into());
    }
    let cfg = train_config(a, obs.n_species(), input_dim(a.input, env.as_ref())?)?;
    let mut trainer = match &a.resume {
        Some(p) => Trainer::resume(p, &cfg, &obs, env.as_ref())?,
        None => Trainer::new(&cfg, &obs, env.as_ref())?,
    };
    while !trainer.is_done() {
        let epoch = trainer.next_epoch();
        let mean = trainer.run_epoch()?;
        println!("epoch {epoch} mean_loss {mean}");
        if let Some(p) = &a.checkpoint {
            trainer.checkpoint(p)?;
        }
    }
    let model = trainer.model()?;
    model.save(&a.out)?;

    let mut m = String::new();
    let mut kv = |k: &str, v: &dyn std::fmt::Display| {
        let _ = writeln!(m, "{k}={v}");
    };
    kv("tool", &"sinr");
    kv("version", &env!("CARGO_PKG_VERSION"));
    kv("command", &"train");
    kv("obs", &a.obs.display());
    kv("obs_sha256", &sha256_file(&a.obs)?);
    for (i, p) in a.env_raster.iter().enumerate() {
        kv(&format!("env_raster.{i}"), &p.display());
        kv(&format!("env_raster.{i}.sha256"), &sha256_file(p)?);
    }
    kv("loss", &cfg.loss.variant);
    kv("lambda", &cfg.loss.lambda);
    kv("epochs", &cfg.epochs);
    kv("batch_size", &cfg.sampler.batch_size);
    kv("lr", &cfg.initial_lr);
    kv("lr_decay", &crate::train::LR_DECAY);
    kv("cap_per_species", &opt(a.cap_per_species));
    kv("min_count", &opt(a.min_count));
    kv("input", &a.input.as_str());
    kv("encoder", &format!("{:?}", a.encoder).to_lowercase());
    kv("hidden", &cfg.net.hidden_dim);
    kv("layers", &cfg.net.n_residual_layers);
    kv("dropout", &cfg.net.dropout_p);
    kv("master_seed", &cfg.master_seed);
    kv("adam_beta1", &cfg.adam.beta1);
    kv("adam_beta2", &cfg.adam.beta2);
    kv("adam_eps", &cfg.adam.eps);
    kv("n_records", &trainer.data().len());
    kv("n_species", &trainer.data().n_species());
    kv("steps_per_epoch", &trainer.steps_per_epoch());
    for (i, l) in trainer.log().epoch_mean_losses.iter().enumerate() {
        kv(&format!("epoch.{i}.mean_loss"), l);
    }
    kv("model", &a.out.display());
    kv("model_sha256", &sha256_file(&a.out)?);
    kv("wall_seconds", &start.elapsed().as_secs_f64());
    let manifest = a.manifest.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".manifest");
        PathBuf::from(p)
    });
    std::fs::write(&manifest, m)?;
    Ok(())
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

/// The predictor selected by `--model`/`--baseline`, owning what it needs.
enum Loaded {
    Model(Box<SinrModel>, Option<EnvRasterStack>),
    Grid(GridBaselineModel),
}

impl Loaded {
    fn predictor(&self, grid_mode: GridBaselineMode) -> Box<dyn Predictor + '_> {
        match self {
            Loaded::Model(m, env) => Box::new(ModelPredictor::new(m, env.as_ref())),
            Loaded::Grid(g) => Box::new(g.predictor(grid_mode)),
        }
    }

    fn features(&self, coords: &[GeoCoord]) -> Result<ndarray::Array2<f64>> {
        match self {
            Loaded::Model(m, env) => ModelPredictor::new(m, env.as_ref()).features(coords),
            Loaded::Grid(_) => Err(Error::InvalidArgument(
                "the grid baseline has no location features".into(),
            )),
        }
    }
}

fn load_predictor(a: &PredictorArgs) -> CliResult<Loaded> {
    let need_obs = || {
        a.obs.as_ref().ok_or_else(|| {
            CliError::Usage(format!("--baseline {:?} needs --obs", a.baseline).to_lowercase())
        })
    };
    match &a.baseline {
        Baseline::None => {
            let path = a.model.as_ref().ok_or_else(|| {
                CliError::Usage("--model is required unless a baseline is chosen".into())
            })?;
            let model = SinrModel::load(path)?;
            let env = load_env(&a.env_raster, model.input_mode)?;
            Ok(Loaded::Model(Box::new(model), env))
        }
        Baseline::Grid(res) => {
            let obs = load_obs(need_obs()?)?;
            Ok(Loaded::Grid(GridBaselineModel::fit(
                &obs,
                GridSpec::new(*res)?,
            )))
        }
        Baseline::Lr => {
            let obs = load_obs(need_obs()?)?;
            let mode = InputMode::Coords;
            let cfg = TrainConfig {
                master_seed: a.seed,
                ..TrainConfig::new(NetConfig::logistic_regression(
                    input_dim(mode, None)?,
                    obs.n_species(),
                ))
            };
            let mut t = Trainer::new(&cfg, &obs, None)?;
            t.run()?;
            Ok(Loaded::Model(Box::new(t.model()?), None))
        }
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn csv_writer(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    Ok(csv::Writer::from_writer(open_out(path)?))
}

fn cmd_eval(cmd: &EvalCommand) -> CliResult<()> {
    match cmd {
        EvalCommand::Map {
            grid,
            dump_cells,
            predictor,
        } => {
            let eg = EvalGrid::read(grid)?;
            let loaded = load_predictor(predictor)?;
            let p = loaded.predictor(GridBaselineMode::Ratio);
            let report = map_task(p.as_ref(), &eg)?;
            if let Some(path) = dump_cells {
                dump_scored_cells(p.as_ref(), &eg, path)?;
            }
            let mut w = csv_writer(predictor.report.as_deref())?;
            w.write_record(["kind", "id", "value", "detail"])
                .map_err(Error::from)?;
            for s in &report.per_species {
                w.write_record([
                    "species",
                    &s.species_id,
                    &s.ap.to_string(),
                    &format!("present={};absent={}", s.n_present, s.n_absent),
                ])
                .map_err(Error::from)?;
            }
            for (id, why) in &report.skipped {
                w.write_record(["skipped", id, "", why])
                    .map_err(Error::from)?;
            }
            w.write_record([
                "summary",
                "MAP",
                &report.map.to_string(),
                &format!("species={}", report.per_species.len()),
            ])
            .map_err(Error::from)?;
            w.flush()?;
            if predictor.report.is_some() {
                println!("MAP {}", report.map);
            }
        }
        EvalCommand::Geoprior { scores, predictor } => {
            let set = ClassifierScoreSet::read(scores)?;
            let loaded = load_predictor(predictor)?;
            let p = loaded.predictor(GridBaselineMode::Indicator);
            let r = geo_prior_delta(&set, p.as_ref())?;
            let mut w = csv_writer(predictor.report.as_deref())?;
            w.write_record(["kind", "id", "value", "detail"])
                .map_err(Error::from)?;
            let images = format!("images={}", r.n_images);
            for (id, v) in [
                ("baseline_top1", r.baseline_top1),
                ("weighted_top1", r.weighted_top1),
                ("delta_top1", r.delta),
            ] {
                w.write_record(["summary", id, &v.to_string(), &images])
                    .map_err(Error::from)?;
            }
            w.flush()?;
            if predictor.report.is_some() {
                println!("delta_top1 {}", r.delta);
            }
        }
        EvalCommand::Geofeature {
            target_raster,
            test_fraction,
            predictor,
        } => {
            if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                return Err(CliError::Usage("--test-fraction must lie in (0, 1)".into()));
            }
            let layers = target_raster
                .iter()
                .map(EnvGrid::read)
                .collect::<Result<Vec<_>>>()?;
            let first = &layers[0];
            let mut cells: Vec<usize> = (0..first.n_cells())
                .filter(|&c| {
                    layers
                        .iter()
                        .any(|g| g.values.get(c).copied().flatten().is_some())
                })
                .collect();
            cells.shuffle(&mut rng_from_seed(predictor.seed));
            let n_test = ((cells.len() as f64) * test_fraction).round() as usize;
            let (test, train) = cells.split_at(n_test.clamp(1, cells.len().saturating_sub(1)));
            let loaded = load_predictor(predictor)?;
            let r = geo_feature_task(|c| loaded.features(c), &layers, train, test, &RIDGE_ALPHAS)?;
            let mut w = csv_writer(predictor.report.as_deref())?;
            w.write_record(["kind", "id", "value", "detail"])
                .map_err(Error::from)?;
            for l in &r.per_layer {
                w.write_record([
                    "layer",
                    &target_raster[l.layer].display().to_string(),
                    &l.r2.to_string(),
                    &format!("alpha={}", l.alpha),
                ])
                .map_err(Error::from)?;
            }
            w.write_record([
                "summary",
                "mean_r2",
                &r.mean_r2.to_string(),
                &format!("train_cells={};test_cells={}", train.len(), test.len()),
            ])
            .map_err(Error::from)?;
            w.flush()?;
            if predictor.report.is_some() {
                println!("mean_r2 {}", r.mean_r2);
            }
        }
    }
    Ok(())
}

fn dump_scored_cells(p: &dyn Predictor, eg: &EvalGrid, path: &Path) -> Result<()> {
    let index: std::collections::HashMap<&str, usize> = p
        .species_ids()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut w = csv_writer(Some(path))?;
    w.write_record(["species_id", "cell", "lon", "lat", "label", "score"])?;
    for (id, labels) in eg.species.iter().zip(&eg.labels) {
        let Some(&j) = index.get(id.as_str()) else {
            continue;
        };
        let coords = labels
            .iter()
            .map(|&(c, _)| eg.grid.cell_centroid(c))
            .collect::<Result<Vec<_>>>()?;
        let scores = p.predict(&coords)?;
        for ((&(cell, present), c), s) in labels.iter().zip(&coords).zip(scores.column(j)) {
            w.write_record([
                id.as_str(),
                &cell.to_string(),
                &c.lon().to_string(),
                &c.lat().to_string(),
                if present { "1" } else { "0" },
                &s.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_coords(path: &Path) -> Result<Vec<GeoCoord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |n: &str| {
        headers
            .iter()
            .position(|h| h == n)
            .ok_or_else(|| Error::MissingColumn(n.into()))
    };
    let (ci, cj) = (col("lon")?, col("lat")?);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let err = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: m,
        };
        let num = |k: usize| {
            row.get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| err(format!("bad number in column {}", k + 1)))
        };
        out.push(GeoCoord::new(num(ci)?, num(cj)?).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

fn species_column(model: &SinrModel, id: &str) -> Result<usize> {
    model
        .species_index(id)
        .ok_or_else(|| Error::UnknownSpecies(id.to_owned()))
}

fn cmd_predict(a: &PredictArgs) -> CliResult<()> {
    let model = SinrModel::load(&a.model)?;
    let env = load_env(&a.env_raster, model.input_mode)?;
    let coords = match (&a.coords, a.lon, a.lat) {
        (Some(p), _, _) => read_coords(p)?,
        (None, Some(lon), Some(lat)) => vec![GeoCoord::new(lon, lat)?],
        _ => {
            return Err(CliError::Usage(
                "give --coords or both --lon and --lat".into(),
            ))
        }
    };
    let cols: Vec<usize> = match &a.species {
        Some(id) => vec![species_column(&model, id)?],
        None => (0..model.species.len()).collect(),
    };
    let y = ModelPredictor::new(&model, env.as_ref()).predict_f32(&coords)?;
    let mut w = csv_writer(a.out.as_deref())?;
    let mut header = vec!["lon".to_string(), "lat".to_string()];
    header.extend(cols.iter().map(|&j| model.species[j].clone()));
    w.write_record(&header).map_err(Error::from)?;
    for (c, row) in coords.iter().zip(y.outer_iter()) {
        let mut rec = vec![c.lon().to_string(), c.lat().to_string()];
        rec.extend(cols.iter().map(|&j| row[j].to_string()));
        w.write_record(&rec).map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}

/// `round(255 * score)` with halves rounded up.
pub fn quantize(score: f32) -> u8 {
    (255.0 * f64::from(score) + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn cmd_export_raster(a: &ExportArgs) -> CliResult<()> {
    let model = SinrModel::load(&a.model)?;
    let env = load_env(&a.env_raster, model.input_mode)?;
    let j = species_column(&model, &a.species)?;
    let grid = GridSpec::new(a.resolution).map_err(|e| CliError::Usage(e.to_string()))?;
    let predictor = ModelPredictor::new(&model, env.as_ref());
    let centroids = grid.centroids();
    let scores: Vec<f32> = predictor.predict_f32(&centroids)?.column(j).to_vec();

    let threshold = match &a.binary_threshold {
        None => None,
        Some(BinaryThreshold::Fixed(t)) => Some(*t),
        Some(BinaryThreshold::F1(path)) => {
            let eg = EvalGrid::read(path)?;
            let s = eg
                .species
                .iter()
                .position(|s| *s == a.species)
                .ok_or_else(|| {
                    Error::UnknownSpecies(format!("{} (not in {})", a.species, path.display()))
                })?;
            let coords = eg.labels[s]
                .iter()
                .map(|&(c, _)| eg.grid.cell_centroid(c))
                .collect::<Result<Vec<_>>>()?;
            let y = predictor.predict_f32(&coords)?;
            let sc: Vec<f64> = y.column(j).iter().map(|&v| f64::from(v)).collect();
            let labels: Vec<bool> = eg.labels[s].iter().map(|&(_, p)| p).collect();
            let t = f1_max_threshold(&sc, &labels)?;
            println!("f1 threshold {t}");
            Some(t)
        }
    };

    let with_ext = |ext: &str| {
        let mut p = a.out.clone().into_os_string();
        p.push(ext);
        PathBuf::from(p)
    };
    let pixel = |s: f32| match threshold {
        Some(t) => {
            if f64::from(s) >= t {
                255
            } else {
                0
            }
        }
        None => quantize(s),
    };

    // Image rows run north to south; grid rows run south to north.
    let mut pgm = BufWriter::new(File::create(with_ext(".pgm"))?);
    writeln!(pgm, "P2\n{} {}\n255", grid.n_lon(), grid.n_lat())?;
    for row in (0..grid.n_lat()).rev() {
        let line: Vec<String> = (0..grid.n_lon())
            .map(|col| pixel(scores[row * grid.n_lon() + col]).to_string())
            .collect();
        writeln!(pgm, "{}", line.join(" "))?;
    }
    pgm.flush()?;

    let mut w = csv_writer(Some(&with_ext(".csv")))?;
    let mut header = vec!["cell", "lon", "lat", "score"];
    if threshold.is_some() {
        header.push("present");
    }
    w.write_record(&header).map_err(Error::from)?;
    for (i, (c, &s)) in centroids.iter().zip(&scores).enumerate() {
        let mut rec = vec![
            i.to_string(),
            c.lon().to_string(),
            c.lat().to_string(),
            s.to_string(),
        ];
        if let Some(t) = threshold {
            rec.push(u8::from(f64::from(s) >= t).to_string());
        }
        w.write_record(&rec).map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}
