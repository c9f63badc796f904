//! Command-line front end: experiment configs and subcommands.
//!
//! Every failure is reported as one line on stderr,
//! `error[<code>]: <message>`, with a nonzero exit status.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::filters::{make_blurred_label, FilterError, FilterKind, FilterSpec};
use crate::image::{list_images, load_corpus, load_image, save_image, Image};
use crate::metrics::{corpus_mean, evaluate, QualityReport};
use crate::n2b::train::{DEFAULT_BASE_WIDTH, DEFAULT_BATCH, DEFAULT_DEPTH, DEFAULT_INITIAL_FRACTION, DEFAULT_ITERATIONS, DEFAULT_PATCH};
use crate::n2b::{curve_csv, denoise, parse_curve_csv, Checkpoint, Stage, StepRecord, TrainConfig, TrainSettings, Trainer, UNetConfig, Variant};
use crate::noise::{item_rng, NoiseKind, NoiseLevel, NoiseSpec};
use crate::synth;
use crate::tensor::AdamConfig;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "N2B_THREADS";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("config is not a JSON object: {0}")]
    Syntax(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: {reason}")]
    Type { key: String, reason: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

/// Flat, fully resolved experiment description. Serializes back to the same
/// flat document with every default written out.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub noisy_dir: PathBuf,
    pub clean_dir: PathBuf,
    pub out_dir: PathBuf,
    pub filter: FilterKind,
    pub kernel_size: usize,
    pub gaussian_sigma: Option<f64>,
    pub sigma_spatial: Option<f64>,
    pub sigma_range: Option<f64>,
    pub noise_model: Option<NoiseKind>,
    pub noise_level: Option<f64>,
    pub noise_level_max: Option<f64>,
    pub noise_seed: u64,
    pub iterations: u64,
    pub initial_fraction: f64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub variant: Variant,
    pub channels: usize,
    pub depth: usize,
    pub base_width: usize,
    pub slope: f64,
    pub log_domain: bool,
}

pub const DEFAULT_FILTER: FilterKind = FilterKind::Bilateral;
pub const DEFAULT_KERNEL: usize = 9;

const KEYS: &[&str] = &[
    "noisy_dir",
    "clean_dir",
    "out_dir",
    "filter",
    "kernel_size",
    "gaussian_sigma",
    "sigma_spatial",
    "sigma_range",
    "noise_model",
    "noise_level",
    "noise_level_max",
    "noise_seed",
    "iterations",
    "initial_fraction",
    "batch_size",
    "patch_size",
    "seed",
    "lr",
    "beta1",
    "beta2",
    "epsilon",
    "variant",
    "channels",
    "depth",
    "base_width",
    "slope",
    "log_domain",
];

struct Fields(Map<String, Value>);

impl Fields {
    fn opt<T: DeserializeOwned>(&mut self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.0.remove(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v).map(Some).map_err(|e| ConfigError::Type {
                key: key.to_string(),
                reason: e.to_string(),
            }),
        }
    }

    fn or<T: DeserializeOwned>(&mut self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn req<T: DeserializeOwned>(&mut self, key: &str) -> Result<T, ConfigError> {
        self.opt(key)?.ok_or_else(|| ConfigError::Missing(key.to_string()))
    }
}

/// Parses and validates a flat JSON experiment document.
pub fn parse_config(document: &str) -> Result<ExperimentConfig, ConfigError> {
    let map = match serde_json::from_str::<Value>(document) {
        Ok(Value::Object(m)) => m,
        Ok(other) => return Err(ConfigError::Syntax(format!("found {other}"))),
        Err(e) => return Err(ConfigError::Syntax(e.to_string())),
    };
    if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(ConfigError::UnknownKey(k.clone()));
    }
    let mut f = Fields(map);
    let defaults = AdamConfig::default();
    let noise_model: Option<NoiseKind> = f.opt("noise_model")?;
    let cfg = ExperimentConfig {
        noisy_dir: f.req("noisy_dir")?,
        clean_dir: f.req("clean_dir")?,
        out_dir: f.req("out_dir")?,
        filter: f.or("filter", DEFAULT_FILTER)?,
        kernel_size: f.or("kernel_size", DEFAULT_KERNEL)?,
        gaussian_sigma: f.opt("gaussian_sigma")?,
        sigma_spatial: f.opt("sigma_spatial")?,
        sigma_range: f.opt("sigma_range")?,
        noise_model,
        noise_level: f.opt("noise_level")?,
        noise_level_max: f.opt("noise_level_max")?,
        noise_seed: f.or("noise_seed", 0)?,
        iterations: f.or("iterations", DEFAULT_ITERATIONS)?,
        initial_fraction: f.or("initial_fraction", DEFAULT_INITIAL_FRACTION)?,
        batch_size: f.or("batch_size", DEFAULT_BATCH)?,
        patch_size: f.or("patch_size", DEFAULT_PATCH)?,
        seed: f.or("seed", 0)?,
        lr: f.or("lr", defaults.lr)?,
        beta1: f.or("beta1", defaults.beta1)?,
        beta2: f.or("beta2", defaults.beta2)?,
        epsilon: f.or("epsilon", defaults.epsilon)?,
        variant: f.or("variant", Variant::N2b)?,
        channels: f.or("channels", 1)?,
        depth: f.or("depth", DEFAULT_DEPTH)?,
        base_width: f.or("base_width", DEFAULT_BASE_WIDTH)?,
        slope: f.or("slope", crate::n2b::nets::DEFAULT_SLOPE)?,
        log_domain: f.or("log_domain", noise_model == Some(NoiseKind::Speckle))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn filter_spec(&self) -> FilterSpec {
        FilterSpec {
            kind: self.filter,
            kernel_size: self.kernel_size,
            gaussian_sigma: self.gaussian_sigma,
            sigma_spatial: self.sigma_spatial,
            sigma_range: self.sigma_range,
        }
    }

    pub fn noise_spec(&self) -> Option<NoiseSpec> {
        let kind = self.noise_model?;
        let lo = self.noise_level.unwrap_or(0.0);
        let level = match self.noise_level_max {
            Some(hi) => NoiseLevel::Range(lo, hi),
            None => NoiseLevel::Fixed(lo),
        };
        Some(NoiseSpec::new(kind, level, self.noise_seed))
    }

    pub fn settings(&self) -> TrainSettings {
        let mut unet = UNetConfig::new(self.channels, self.depth, self.base_width);
        unet.slope = self.slope;
        TrainSettings {
            iterations: self.iterations,
            initial_fraction: self.initial_fraction,
            batch_size: self.batch_size,
            patch_size: self.patch_size,
            seed: self.seed,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            variant: self.variant,
            unet,
            log_domain: self.log_domain,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            noisy: self.noisy_dir.clone(),
            clean: self.clean_dir.clone(),
            filter: self.filter_spec(),
            noise: self.noise_spec(),
            settings: self.settings(),
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, reason: String| ConfigError::Invalid {
            key: key.to_string(),
            reason,
        };
        self.filter_spec().validate().map_err(|e| {
            let key = match &e {
                FilterError::KernelSize(_) => "kernel_size",
                FilterError::Sigma { name, .. } => name,
                FilterError::Image(_) => "filter",
            };
            invalid(key, e.to_string())
        })?;
        if self.noise_model.is_some() && self.noise_level.is_none() {
            return Err(ConfigError::Missing("noise_level".into()));
        }
        if self.noise_model.is_none() && (self.noise_level.is_some() || self.noise_level_max.is_some()) {
            return Err(ConfigError::Missing("noise_model".into()));
        }
        if let Some(n) = self.noise_spec() {
            n.validate().map_err(|e| invalid("noise_level", e.to_string()))?;
        }
        if self.depth == 0 || self.base_width == 0 {
            return Err(invalid("depth", "depth and base_width must be positive".into()));
        }
        if !(self.channels == 1 || self.channels == 3) {
            return Err(invalid("channels", format!("{} (expected 1 or 3)", self.channels)));
        }
        self.settings().validate().map_err(|e| {
            let msg = e.to_string();
            let key = KEYS.iter().find(|k| msg.contains(*k)).copied().unwrap_or("lr");
            invalid(key, msg)
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "n2b", version, about = "Noise2Blur denoising toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Blurred labels for every image of a directory.
    MakeLabels(MakeLabelsArgs),
    /// Synthetic degradation of every image of a directory.
    AddNoise(AddNoiseArgs),
    /// Train from an experiment config.
    Train(TrainArgs),
    /// Run a trained DnNet over a directory.
    Denoise(DenoiseArgs),
    /// PSNR/SSIM of a test directory against references, as CSV.
    Eval(EvalArgs),
    /// Bin a loss-curve CSV for plotting.
    Curves(CurvesArgs),
    /// Write procedural grayscale scenes.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct IoArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct MakeLabelsArgs {
    #[arg(long)]
    filter: FilterKind,
    #[arg(long, alias = "kernel-size")]
    kernel: usize,
    #[arg(long)]
    gaussian_sigma: Option<f64>,
    #[arg(long)]
    sigma_spatial: Option<f64>,
    #[arg(long)]
    sigma_range: Option<f64>,
    #[command(flatten)]
    io: IoArgs,
}

#[derive(Debug, Args)]
struct AddNoiseArgs {
    #[arg(long)]
    model: NoiseKind,
    /// Fixed level: sigma (0..255 scale), variance, or probability.
    #[arg(long, alias = "sigma", conflicts_with = "level_range")]
    level: Option<f64>,
    /// Per-image uniform level `lo,hi`.
    #[arg(long, alias = "sigma-range")]
    level_range: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    io: IoArgs,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DenoiseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    io: IoArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CurvesArgs {
    #[arg(long)]
    curve: PathBuf,
    /// Number of iteration bins per stage.
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// A failed command: a short machine-readable code and a message.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    fn new(code: &'static str, message: impl std::fmt::Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }

    /// One line, newlines folded.
    pub fn line(&self) -> String {
        let msg: Vec<&str> = self.message.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        format!("error[{}]: {}", self.code, msg.join(" "))
    }

    pub fn exit_code(&self) -> i32 {
        if self.code == "usage" {
            2
        } else {
            1
        }
    }
}

macro_rules! fail {
    ($code:literal) => {
        |e| CliError::new($code, e)
    };
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code. Normal output goes to `stdout`.
pub fn dispatch<I, S>(argv: I, stdout: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = write!(stdout, "{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::new("usage", first).line());
            return 2;
        }
    };
    configure_threads();
    match run(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}

fn configure_threads() {
    let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) else {
        return;
    };
    // Only the first call in a process can set the global pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
}

fn run(cmd: Command, stdout: &mut dyn std::io::Write) -> Result<(), CliError> {
    match cmd {
        Command::MakeLabels(a) => make_labels(a),
        Command::AddNoise(a) => add_noise(a),
        Command::Train(a) => train_cmd(a, stdout),
        Command::Denoise(a) => denoise_cmd(a),
        Command::Eval(a) => eval_cmd(a, stdout),
        Command::Curves(a) => curves_cmd(a, stdout),
        Command::Synth(a) => synth_cmd(a),
    }
}

/// Creates `out`, refusing to write into the input directory.
fn prepare_output(input: &Path, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::new("io", format!("{}: {e}", out.display())))?;
    let same = match (input.canonicalize(), out.canonicalize()) {
        (Ok(a), Ok(b)) => a == b || (input.is_file() && a.parent() == Some(b.as_path())),
        _ => false,
    };
    if same {
        return Err(CliError::new("usage", "output directory must differ from the input directory"));
    }
    Ok(())
}

fn load_inputs(dir: &Path) -> Result<Vec<(String, Image)>, CliError> {
    let corpus = load_corpus(dir).map_err(fail!("image"))?;
    if corpus.is_empty() {
        return Err(CliError::new("empty", format!("no images in {}", dir.display())));
    }
    Ok(corpus)
}

fn write_all(out: &Path, items: &[(String, Image)]) -> Result<(), CliError> {
    items
        .par_iter()
        .try_for_each(|(name, img)| save_image(img, out.join(name)))
        .map_err(fail!("image"))
}

fn make_labels(a: MakeLabelsArgs) -> Result<(), CliError> {
    let spec = FilterSpec {
        kind: a.filter,
        kernel_size: a.kernel,
        gaussian_sigma: a.gaussian_sigma,
        sigma_spatial: a.sigma_spatial,
        sigma_range: a.sigma_range,
    };
    spec.validate().map_err(fail!("filter"))?;
    let inputs = load_inputs(&a.io.input)?;
    prepare_output(&a.io.input, &a.io.output)?;
    let labels = inputs
        .par_iter()
        .map(|(name, x)| make_blurred_label(x, &spec).map(|(y_b, _)| (name.clone(), y_b)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail!("filter"))?;
    write_all(&a.io.output, &labels)
}

fn parse_pair(s: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::new("usage", format!("expected `lo,hi`, got `{s}`"));
    let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn add_noise(a: AddNoiseArgs) -> Result<(), CliError> {
    let level = match (a.level, &a.level_range) {
        (Some(v), None) => NoiseLevel::Fixed(v),
        (None, Some(r)) => {
            let (lo, hi) = parse_pair(r)?;
            NoiseLevel::Range(lo, hi)
        }
        _ => return Err(CliError::new("usage", "give exactly one of --level or --level-range")),
    };
    let spec = NoiseSpec::new(a.model, level, a.seed);
    spec.validate().map_err(fail!("noise"))?;
    let inputs = load_inputs(&a.io.input)?;
    prepare_output(&a.io.input, &a.io.output)?;
    let noisy = inputs
        .par_iter()
        .enumerate()
        .map(|(i, (name, y))| {
            spec.degrade(y, &mut item_rng(a.seed, i as u64))
                .map(|s| (name.clone(), s.noisy))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail!("noise"))?;
    write_all(&a.io.output, &noisy)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

pub const CHECKPOINT_FILE: &str = "checkpoint.n2b";
pub const CURVE_FILE: &str = "curve.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";

fn train_cmd(a: TrainArgs, stdout: &mut dyn std::io::Write) -> Result<(), CliError> {
    let doc = std::fs::read_to_string(&a.config).map_err(|e| CliError::new("io", format!("{}: {e}", a.config.display())))?;
    let mut cfg = parse_config(&doc).map_err(fail!("config"))?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let tc = cfg.train_config();
    let data = tc.load_data().map_err(fail!("train"))?;
    let (mut trainer, mut curve) = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path).map_err(fail!("checkpoint"))?;
            let echo = ckpt.echo().map_err(fail!("checkpoint"))?;
            if echo.settings != tc.settings {
                return Err(CliError::new("checkpoint", "checkpoint was written with different settings"));
            }
            let prior = cfg.out_dir.join(CURVE_FILE);
            let curve = match std::fs::read_to_string(&prior) {
                Ok(text) => parse_curve_csv(&text).map_err(fail!("curve"))?,
                Err(_) => Vec::new(),
            };
            let curve: Vec<StepRecord> = curve.into_iter().filter(|r| r.iteration < ckpt.iteration).collect();
            (Trainer::<f32>::resume(&ckpt, data).map_err(fail!("train"))?, curve)
        }
        None => (Trainer::<f32>::new(tc.settings.clone(), data).map_err(fail!("train"))?, Vec::new()),
    };
    trainer.source = Some(serde_json::to_value(&tc).map_err(fail!("config"))?);
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::new("io", format!("{}: {e}", cfg.out_dir.display())))?;
    curve.extend(trainer.run(|_, _, _| {}).map_err(fail!("train"))?);
    let out = &cfg.out_dir;
    trainer.checkpoint().save(out.join(CHECKPOINT_FILE)).map_err(fail!("checkpoint"))?;
    write_file(&out.join(CURVE_FILE), curve_csv(&curve).as_bytes())?;
    write_file(&out.join(RESOLVED_CONFIG_FILE), cfg.to_json().as_bytes())?;
    let last = curve.last().map(|r| r.l_n2b).unwrap_or(f64::NAN);
    let _ = writeln!(stdout, "trained {} iterations, final l_n2b {last:.6}", trainer.iteration);
    Ok(())
}

fn denoise_cmd(a: DenoiseArgs) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&a.checkpoint).map_err(fail!("checkpoint"))?;
    let log = ckpt.echo().map_err(fail!("checkpoint"))?.settings.log_domain;
    let dn = ckpt.dnnet::<f32>().map_err(fail!("checkpoint"))?;
    let inputs = load_inputs(&a.io.input)?;
    prepare_output(&a.io.input, &a.io.output)?;
    let outputs = inputs
        .iter()
        .map(|(name, x)| denoise(&dn, x, log).map(|y| (name.clone(), y)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail!("denoise"))?;
    write_all(&a.io.output, &outputs)
}

/// CSV `filename,psnr_db,ssim` with a final `mean` row.
pub fn reports_csv(reports: &[QualityReport]) -> String {
    let mut out = String::from("filename,psnr_db,ssim\n");
    for r in reports {
        let _ = writeln!(out, "{},{},{:.6}", r.name, r.psnr, r.ssim);
    }
    let (p, s) = corpus_mean(reports);
    let _ = writeln!(out, "mean,{p},{s:.6}");
    out
}

fn eval_cmd(a: EvalArgs, stdout: &mut dyn std::io::Write) -> Result<(), CliError> {
    let tests = list_images(&a.test).map_err(fail!("image"))?;
    if tests.is_empty() {
        return Err(CliError::new("empty", format!("no images in {}", a.test.display())));
    }
    let reports = tests
        .par_iter()
        .map(|path| {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let reference = a.reference.join(&name);
            if !reference.exists() {
                return Err(CliError::new("missing", format!("no reference for {name}")));
            }
            let t = load_image(path).map_err(fail!("image"))?;
            let r = load_image(&reference).map_err(fail!("image"))?;
            evaluate(name, &t, &r).map_err(fail!("metric"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let csv = reports_csv(&reports);
    match &a.out {
        Some(p) => write_file(p, csv.as_bytes()),
        None => stdout.write_all(csv.as_bytes()).map_err(fail!("io")),
    }
}

/// Mean losses over `bins` equal iteration ranges of each stage.
pub fn bin_curve(curve: &[StepRecord], bins: usize) -> Vec<StepRecord> {
    let mut out = Vec::new();
    for stage in [Stage::Initial, Stage::Convergence, Stage::Supervised] {
        let part: Vec<&StepRecord> = curve.iter().filter(|r| r.stage == stage).collect();
        if part.is_empty() {
            continue;
        }
        let per = part.len().div_ceil(bins.max(1));
        for chunk in part.chunks(per) {
            let n = chunk.len() as f64;
            let lc: Vec<f64> = chunk.iter().filter_map(|r| r.l_n2c).collect();
            out.push(StepRecord {
                iteration: chunk[chunk.len() - 1].iteration,
                stage,
                l_n2b: chunk.iter().map(|r| r.l_n2b).sum::<f64>() / n,
                l_n2c: (!lc.is_empty()).then(|| lc.iter().sum::<f64>() / lc.len() as f64),
            });
        }
    }
    out
}

fn curves_cmd(a: CurvesArgs, stdout: &mut dyn std::io::Write) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.curve).map_err(|e| CliError::new("io", format!("{}: {e}", a.curve.display())))?;
    let curve = parse_curve_csv(&text).map_err(fail!("curve"))?;
    let csv = curve_csv(&bin_curve(&curve, a.bins));
    match &a.out {
        Some(p) => write_file(p, csv.as_bytes()),
        None => stdout.write_all(csv.as_bytes()).map_err(fail!("io")),
    }
}

fn synth_cmd(a: SynthArgs) -> Result<(), CliError> {
    if a.width == 0 || a.height == 0 {
        return Err(CliError::new("usage", "width and height must be positive"));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::new("io", format!("{}: {e}", a.out.display())))?;
    let items: Vec<(String, Image)> = synth::corpus(a.count, a.width, a.height, a.seed)
        .into_iter()
        .enumerate()
        .map(|(i, img)| (format!("{i:04}.png"), img))
        .collect();
    write_all(&a.out, &items)
}
