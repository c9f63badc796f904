//! The training loop, its configuration and inference.

use std::path::PathBuf;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::nets::{DnNet, NENet, UNetConfig};
use super::step::{convergence_step, initial_step, supervised_step, Optimizers, Stage, StepDiagnostics, StepRecord};
use super::TrainError;
use crate::filters::{make_blurred_label, FilterSpec};
use crate::image::{image_to_tensor, images_to_batch, load_corpus, tensor_to_image, Image, PatchLocation};
use crate::lattice;
use crate::noise::{self, item_rng, NoiseSpec};
use crate::scalar::Scalar;
use crate::tensor::{Adam, AdamConfig, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Two-stage training with gradient interruption.
    N2b,
    /// Ablation without the DnNet to NENet interruption.
    N2bV,
    /// DnNet alone on true clean targets.
    Supervised,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n2b" => Ok(Self::N2b),
            "n2b_v" => Ok(Self::N2bV),
            "supervised" => Ok(Self::Supervised),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

pub const DEFAULT_INITIAL_FRACTION: f64 = 0.05;
pub const DEFAULT_BATCH: usize = 4;
pub const DEFAULT_PATCH: usize = 64;
pub const DEFAULT_ITERATIONS: u64 = 2000;
pub const DEFAULT_DEPTH: usize = 3;
pub const DEFAULT_BASE_WIDTH: usize = 32;

/// Everything that shapes a run apart from the data itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub iterations: u64,
    pub initial_fraction: f64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub variant: Variant,
    pub unet: UNetConfig,
    /// Train and infer on `ln(x + eps)` (speckle).
    pub log_domain: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            initial_fraction: DEFAULT_INITIAL_FRACTION,
            batch_size: DEFAULT_BATCH,
            patch_size: DEFAULT_PATCH,
            seed: 0,
            adam: AdamConfig::default(),
            variant: Variant::N2b,
            unet: UNetConfig::new(1, DEFAULT_DEPTH, DEFAULT_BASE_WIDTH),
            log_domain: false,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.initial_fraction > 0.0 && self.initial_fraction < 1.0) {
            return bad(format!("initial_fraction {} outside (0, 1)", self.initial_fraction));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        let m = self.unet.size_multiple();
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(m) {
            return bad(format!("patch_size {} is not a positive multiple of {m}", self.patch_size));
        }
        let a = self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return bad(format!("invalid optimizer settings {a:?}"));
        }
        Ok(())
    }

    /// `⌈fraction · T⌉`.
    pub fn initial_steps(&self) -> u64 {
        let raw = self.initial_fraction * self.iterations as f64;
        // Guard against products like 5.000000000000001.
        let rounded = raw.round();
        if (raw - rounded).abs() < 1e-9 {
            rounded as u64
        } else {
            raw.ceil() as u64
        }
    }

    pub fn stage_at(&self, iteration: u64) -> Stage {
        match self.variant {
            Variant::Supervised => Stage::Supervised,
            _ if iteration < self.initial_steps() => Stage::Initial,
            _ => Stage::Convergence,
        }
    }
}

/// Training images, already mapped to the training domain and snapped to
/// the lattice, with blurred labels computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub noisy: Vec<Image>,
    pub labels: Vec<Image>,
    pub clean: Vec<Image>,
    /// Ground truth of `noisy`, when synthetic.
    pub truth: Option<Vec<Image>>,
}

fn to_domain(img: &Image, log: bool) -> Image {
    let mapped = if log { noise::log_domain(img) } else { img.clone() };
    lattice::snap_image(&mapped)
}

impl TrainData {
    pub fn prepare(
        noisy: Vec<Image>,
        clean: Vec<Image>,
        truth: Option<Vec<Image>>,
        filter: &FilterSpec,
        log_domain: bool,
    ) -> Result<Self, TrainError> {
        if noisy.is_empty() {
            return Err(TrainError::EmptyCorpus("noisy"));
        }
        if let Some(t) = &truth {
            if t.len() != noisy.len() {
                return Err(TrainError::Config(format!(
                    "{} ground-truth images for {} noisy images",
                    t.len(),
                    noisy.len()
                )));
            }
            for (a, b) in t.iter().zip(&noisy) {
                a.expect_same_shape(b).map_err(|e| TrainError::Config(e.to_string()))?;
            }
        }
        let noisy: Vec<Image> = noisy.iter().map(|x| to_domain(x, log_domain)).collect();
        let labels = noisy
            .iter()
            .map(|x| make_blurred_label(x, filter).map(|(y_b, _)| y_b))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            labels,
            clean: clean.iter().map(|c| to_domain(c, log_domain)).collect(),
            truth: truth.map(|t| t.iter().map(|y| to_domain(y, log_domain)).collect()),
            noisy,
        })
    }

    pub fn channels(&self) -> usize {
        self.noisy[0].channels()
    }

    fn check(&self, settings: &TrainSettings) -> Result<(), TrainError> {
        let supervised = settings.variant == Variant::Supervised;
        if supervised && self.truth.is_none() {
            return Err(TrainError::Config("the supervised variant needs ground-truth images".into()));
        }
        if !supervised && self.clean.is_empty() {
            return Err(TrainError::EmptyCorpus("clean"));
        }
        let ch = settings.unet.channels;
        let p = settings.patch_size;
        for img in self.noisy.iter().chain(&self.clean) {
            if img.channels() != ch {
                return Err(TrainError::Config(format!(
                    "image has {} channels, network expects {ch}",
                    img.channels()
                )));
            }
            if img.width() < p || img.height() < p {
                return Err(TrainError::Config(format!(
                    "patch {p} does not fit in {}x{} image",
                    img.width(),
                    img.height()
                )));
            }
        }
        Ok(())
    }
}

/// One sampled minibatch in the training domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub x: Tensor<T>,
    pub y_b: Tensor<T>,
    /// Unpaired clean patches (N2B stages).
    pub c: Option<Tensor<T>>,
    /// Ground truth of `x`, when available.
    pub y: Option<Tensor<T>>,
}

const ROLE_INIT_DN: u64 = 1;
const ROLE_INIT_NE: u64 = 2;
const ROLE_PATCH: u64 = 3;
const ROLE_CLEAN: u64 = 4;

/// Independent seed for one consumer of randomness.
pub fn role_seed(seed: u64, role: u64) -> u64 {
    item_rng(seed, role).next_u64()
}

fn random_location(rng: &mut impl Rng, sources: &[Image], patch: usize) -> PatchLocation {
    let image = rng.random_range(0..sources.len());
    let (w, h, _) = sources[image].dims();
    PatchLocation {
        image,
        x: rng.random_range(0..=w - patch),
        y: rng.random_range(0..=h - patch),
        size: patch,
    }
}

fn batch_of<T: Scalar>(sources: &[Image], locs: &[PatchLocation]) -> Tensor<T> {
    let crops: Vec<Image> = locs.iter().map(|l| l.crop(&sources[l.image])).collect();
    images_to_batch(&crops.iter().collect::<Vec<_>>()).expect("patches share a shape")
}

/// Stateful trainer. Randomness for iteration `t` is derived from
/// `(seed, role, t)` alone, so a trainer resumed at `t` continues exactly as
/// an uninterrupted one would.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub settings: TrainSettings,
    pub data: TrainData,
    pub dn: DnNet<T>,
    pub ne: NENet<T>,
    pub opt: Optimizers<T>,
    pub iteration: u64,
    /// Free-form description of the data source, echoed into checkpoints.
    pub source: Option<serde_json::Value>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(settings: TrainSettings, data: TrainData) -> Result<Self, TrainError> {
        settings.validate()?;
        data.check(&settings)?;
        let dn = DnNet::build(settings.unet.clone(), role_seed(settings.seed, ROLE_INIT_DN))?;
        let ne = NENet::build(settings.unet.channels, role_seed(settings.seed, ROLE_INIT_NE))?;
        let opt = Optimizers {
            dn: Adam::new(settings.adam, &dn.params),
            ne: Adam::new(settings.adam, &ne.params),
        };
        Ok(Self {
            settings,
            data,
            dn,
            ne,
            opt,
            iteration: 0,
            source: None,
        })
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.settings.iterations
    }

    /// The minibatch used at iteration `t`.
    pub fn batch(&self, t: u64) -> Batch<T> {
        let s = &self.settings;
        let d = &self.data;
        let mut prng = item_rng(role_seed(s.seed, ROLE_PATCH), t);
        let locs: Vec<_> = (0..s.batch_size)
            .map(|_| random_location(&mut prng, &d.noisy, s.patch_size))
            .collect();
        let c = (!d.clean.is_empty()).then(|| {
            let mut crng = item_rng(role_seed(s.seed, ROLE_CLEAN), t);
            let clocs: Vec<_> = (0..s.batch_size)
                .map(|_| random_location(&mut crng, &d.clean, s.patch_size))
                .collect();
            batch_of(&d.clean, &clocs)
        });
        Batch {
            x: batch_of(&d.noisy, &locs),
            y_b: batch_of(&d.labels, &locs),
            c,
            y: d.truth.as_ref().map(|y| batch_of(y, &locs)),
        }
    }

    /// Runs iteration `self.iteration` and advances.
    pub fn step(&mut self) -> Result<(StepRecord, Option<StepDiagnostics>), TrainError> {
        let t = self.iteration;
        let b = self.batch(t);
        let out = match self.settings.stage_at(t) {
            Stage::Supervised => {
                let y = b.y.as_ref().expect("checked at construction");
                (supervised_step(&mut self.dn, &mut self.opt.dn, &b.x, y, t)?, None)
            }
            Stage::Initial => (initial_step(&mut self.dn, &mut self.ne, &mut self.opt, &b.x, &b.y_b, t)?, None),
            Stage::Convergence => {
                let c = b.c.as_ref().expect("checked at construction");
                let interrupt = self.settings.variant == Variant::N2b;
                let (r, d) = convergence_step(&mut self.dn, &mut self.ne, &mut self.opt, &b.x, &b.y_b, c, interrupt, t)?;
                (r, Some(d))
            }
        };
        self.iteration += 1;
        Ok(out)
    }

    /// Runs to completion, calling `observe` after every step.
    pub fn run(&mut self, mut observe: impl FnMut(&Self, &StepRecord, Option<&StepDiagnostics>)) -> Result<Vec<StepRecord>, TrainError> {
        let mut curve = Vec::new();
        while !self.is_done() {
            let (r, d) = self.step()?;
            observe(self, &r, d.as_ref());
            curve.push(r);
        }
        Ok(curve)
    }

    /// Mean `|n̂ - n|` with `n̂ = x - F(x)` over the training images that
    /// have ground truth, in the training domain.
    pub fn noise_estimate_error(&self) -> Option<f64> {
        let truth = self.data.truth.as_ref()?;
        let mut total = 0.0;
        for (x, y) in self.data.noisy.iter().zip(truth) {
            let f = forward_padded(&self.dn, x).ok()?;
            let n = x.sub(y).ok()?;
            let n_hat = x.sub(&f).ok()?;
            total += n_hat.sub(&n).ok()?.mean_abs();
        }
        Some(total / truth.len() as f64)
    }
}

/// Data sources and run settings for [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Directory (or single image file) of noisy images. With `noise` set
    /// these are clean sources degraded once on load.
    pub noisy: PathBuf,
    /// Directory of unpaired clean images.
    pub clean: PathBuf,
    pub filter: FilterSpec,
    pub noise: Option<NoiseSpec>,
    pub settings: TrainSettings,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.settings.validate()?;
        self.filter.validate()?;
        if let Some(n) = &self.noise {
            n.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        }
        for p in [&self.noisy, &self.clean] {
            if !p.exists() {
                return Err(TrainError::Config(format!("path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Loads, degrades (if configured) and prepares the training data.
    pub fn load_data(&self) -> Result<TrainData, TrainError> {
        self.validate()?;
        let sources: Vec<Image> = load_corpus(&self.noisy)?.into_iter().map(|(_, i)| i).collect();
        let clean: Vec<Image> = if self.settings.variant == Variant::Supervised {
            Vec::new()
        } else {
            load_corpus(&self.clean)?.into_iter().map(|(_, i)| i).collect()
        };
        let (noisy, truth) = match &self.noise {
            Some(spec) => {
                let samples = sources
                    .iter()
                    .enumerate()
                    .map(|(i, y)| spec.degrade(y, &mut item_rng(spec.seed, i as u64)))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| TrainError::Config(e.to_string()))?;
                let (x, y) = samples.into_iter().map(|s| (s.noisy, s.clean)).unzip();
                (x, Some(y))
            }
            None => (sources, None),
        };
        TrainData::prepare(noisy, clean, truth, &self.filter, self.settings.log_domain)
    }
}

/// Trains from `config` and returns the final checkpoint with the full
/// loss curve.
pub fn train(config: &TrainConfig) -> Result<(super::Checkpoint, Vec<StepRecord>), TrainError> {
    let data = config.load_data()?;
    let mut trainer = Trainer::<f32>::new(config.settings.clone(), data)?;
    trainer.source = Some(serde_json::to_value(config).map_err(|e| TrainError::Config(e.to_string()))?);
    let curve = trainer.run(|_, _, _| {})?;
    Ok((trainer.checkpoint(), curve))
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// `F(x)` in the training domain, reflect-padding to the network's size
/// multiple and cropping back.
pub fn forward_padded<T: Scalar>(dn: &DnNet<T>, x: &Image) -> Result<Image, TrainError> {
    let m = dn.config.size_multiple();
    let (w, h, ch) = x.dims();
    let (pw, ph) = (w.div_ceil(m) * m, h.div_ceil(m) * m);
    let (ox, oy) = ((pw - w) / 2, (ph - h) / 2);
    let mut padded = Image::filled(pw, ph, ch, 0.0);
    for c in 0..ch {
        for y in 0..ph {
            for xx in 0..pw {
                let sx = reflect(xx as isize - ox as isize, w);
                let sy = reflect(y as isize - oy as isize, h);
                padded.set(c, xx, y, x.get(c, sx, sy));
            }
        }
    }
    let out = dn.infer(&image_to_tensor::<T>(&padded))?;
    let out = tensor_to_image(&out).map_err(|e| TrainError::Config(e.to_string()))?;
    Ok(out.crop(ox, oy, w, h))
}

/// Inference: `clamp_01(F(x))`, through the log domain when the network was
/// trained there. NENet is not involved.
pub fn denoise<T: Scalar>(dn: &DnNet<T>, x: &Image, log_domain: bool) -> Result<Image, TrainError> {
    if log_domain {
        let z = lattice::snap_image(&noise::log_domain(x));
        Ok(noise::exp_domain(&forward_padded(dn, &z)?).clamp_01())
    } else {
        Ok(forward_padded(dn, x)?.clamp_01())
    }
}

/// Loss curve as CSV `iter,stage,l_n2b,l_n2c`; `l_n2c` is empty outside the
/// convergence stage.
pub fn curve_csv(curve: &[StepRecord]) -> String {
    let mut out = String::from("iter,stage,l_n2b,l_n2c\n");
    for r in curve {
        let lc = r.l_n2c.map(|v| format!("{v:e}")).unwrap_or_default();
        out.push_str(&format!("{},{},{:e},{}\n", r.iteration, r.stage.as_str(), r.l_n2b, lc));
    }
    out
}

/// Parses [`curve_csv`] output.
pub fn parse_curve_csv(text: &str) -> Result<Vec<StepRecord>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some("iter,stage,l_n2b,l_n2c") => {}
        other => return Err(format!("bad curve header {other:?}")),
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let [it, st, lb, lc] = f[..] else {
                return Err(format!("bad curve row `{line}`"));
            };
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("`{s}`: {e}"));
            Ok(StepRecord {
                iteration: it.parse().map_err(|e| format!("`{it}`: {e}"))?,
                stage: st.parse()?,
                l_n2b: num(lb)?,
                l_n2c: if lc.is_empty() { None } else { Some(num(lc)?) },
            })
        })
        .collect()
}
