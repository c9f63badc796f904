//! Synthetic degradations and noise transplantation.
//!
//! Every model returns a [`DegradedSample`] whose noisy image is formed as
//! `clean + true_noise` in `f32`, so that identity holds bit for bit. Nothing
//! here clamps.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::font;
use crate::image::Image;
use crate::lattice;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

/// Offset guarding `ln` against zero intensities.
pub const LOG_EPS: f32 = 1e-3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NoiseError {
    #[error("noise level {value} invalid for {kind:?}: {reason}")]
    Level {
        kind: NoiseKind,
        value: f64,
        reason: &'static str,
    },
    #[error("noise range [{lo}, {hi}] is inverted")]
    InvertedRange { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Level is the standard deviation on the 0..255 scale.
    Gaussian,
    /// Level is the variance `v` of the multiplicative uniform noise.
    Speckle,
    /// Level is the replacement probability `p`.
    SaltPepper,
    /// Level is the overwritten-pixel fraction `p`.
    Text,
}

impl std::str::FromStr for NoiseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "speckle" => Ok(Self::Speckle),
            "salt_pepper" | "salt-pepper" => Ok(Self::SaltPepper),
            "text" => Ok(Self::Text),
            other => Err(format!("unknown noise model `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    Fixed(f64),
    /// Uniform draw in `[lo, hi]`, fresh for every image.
    Range(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub level: NoiseLevel,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegradedSample {
    pub noisy: Image,
    pub clean: Image,
    /// `noisy - clean`; diagnostics only.
    pub true_noise: Image,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, level: NoiseLevel, seed: u64) -> Self {
        Self { kind, level, seed }
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        let (lo, hi) = match self.level {
            NoiseLevel::Fixed(v) => (v, v),
            NoiseLevel::Range(lo, hi) => (lo, hi),
        };
        if lo > hi {
            return Err(NoiseError::InvertedRange { lo, hi });
        }
        for value in [lo, hi] {
            let bad = |reason| NoiseError::Level {
                kind: self.kind,
                value,
                reason,
            };
            if !value.is_finite() || value < 0.0 {
                return Err(bad("must be finite and non-negative"));
            }
            if matches!(self.kind, NoiseKind::SaltPepper | NoiseKind::Text) && value > 1.0 {
                return Err(bad("probability must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn draw_level(&self, rng: &mut impl Rng) -> f64 {
        match self.level {
            NoiseLevel::Fixed(v) => v,
            NoiseLevel::Range(lo, hi) if lo == hi => lo,
            NoiseLevel::Range(lo, hi) => rng.random_range(lo..=hi),
        }
    }

    /// Degrades `y` with a level drawn for this image.
    pub fn degrade(&self, y: &Image, rng: &mut impl Rng) -> Result<DegradedSample, NoiseError> {
        self.validate()?;
        let level = self.draw_level(rng);
        Ok(match self.kind {
            NoiseKind::Gaussian => add_gaussian(y, level, rng),
            NoiseKind::Speckle => add_speckle(y, level, rng),
            NoiseKind::SaltPepper => add_salt_pepper(y, level, rng),
            NoiseKind::Text => add_text(y, level, rng),
        })
    }
}

fn compose(y: &Image, noise: Image) -> DegradedSample {
    let noisy = y.add(&noise).expect("same shape");
    DegradedSample {
        noisy,
        clean: y.clone(),
        true_noise: noise,
    }
}

/// Additive white Gaussian noise with standard deviation `sigma_255 / 255`.
pub fn add_gaussian(y: &Image, sigma_255: f64, rng: &mut impl Rng) -> DegradedSample {
    assert!(sigma_255 >= 0.0, "sigma must be non-negative");
    let sigma = sigma_255 / 255.0;
    let mut noise = y.map(|_| 0.0);
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("valid sigma");
        for v in noise.pixels_mut() {
            *v = lattice::snap(normal.sample(rng) as f32);
        }
    }
    compose(y, noise)
}

/// Multiplicative speckle `x = y + n*y`, `n ~ U(-sqrt(3v), sqrt(3v))`.
pub fn add_speckle(y: &Image, v: f64, rng: &mut impl Rng) -> DegradedSample {
    assert!(v >= 0.0, "variance must be non-negative");
    let a = (3.0 * v).sqrt();
    let mut noise = y.map(|_| 0.0);
    if a > 0.0 {
        let uniform = Uniform::new_inclusive(-a, a).expect("valid bounds");
        for (n, &s) in noise.pixels_mut().iter_mut().zip(y.pixels()) {
            *n = lattice::snap((uniform.sample(rng) * s as f64) as f32);
        }
    }
    compose(y, noise)
}

/// Replacement noise: the noise is `target - y` so `y + noise` lands on the
/// target (exactly, for targets that are multiples of 1/256).
fn replacement_noise(y: &Image, targets: &[Option<f32>]) -> Image {
    let mut noise = y.map(|_| 0.0);
    for ((n, &s), t) in noise.pixels_mut().iter_mut().zip(y.pixels()).zip(targets) {
        if let Some(t) = t {
            *n = t - s;
        }
    }
    noise
}

/// Each pixel (all channels together) is replaced with probability `p` by
/// 1.0 or 0.0 with equal odds.
pub fn add_salt_pepper(y: &Image, p: f64, rng: &mut impl Rng) -> DegradedSample {
    assert!((0.0..=1.0).contains(&p), "p must lie in [0, 1]");
    let (w, h, ch) = y.dims();
    let mut targets = vec![None; w * h * ch];
    for i in 0..w * h {
        if rng.random_bool(p) {
            let v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            for c in 0..ch {
                targets[c * w * h + i] = Some(v);
            }
        }
    }
    compose(y, replacement_noise(y, &targets))
}

/// Overlay produced by [`render_text`].
#[derive(Debug, Clone)]
pub struct TextOverlay {
    /// Index into `colors` of the last string covering each pixel.
    pub owner: Vec<Option<usize>>,
    /// Per-string color, one entry per channel.
    pub colors: Vec<Vec<f32>>,
    pub strings: Vec<String>,
}

impl TextOverlay {
    pub fn coverage(&self) -> f64 {
        self.owner.iter().filter(|o| o.is_some()).count() as f64 / self.owner.len().max(1) as f64
    }
}

const TEXT_TOLERANCE: f64 = 0.02;

/// Draws random strings (random length, scale 1..=4, color and position)
/// until the covered fraction reaches `p` within the tolerance.
pub fn render_text(width: usize, height: usize, channels: usize, p: f64, rng: &mut impl Rng) -> TextOverlay {
    let total = width * height;
    let mut owner = vec![None; total];
    let mut covered = 0usize;
    let mut colors = Vec::new();
    let mut strings = Vec::new();
    let target = (p * total as f64).round() as usize;
    let limit = ((p + TEXT_TOLERANCE) * total as f64).floor() as usize;
    let mut attempts = 0;
    while covered < target && attempts < 20_000 {
        attempts += 1;
        let len = rng.random_range(2..=8);
        let text: String = (0..len)
            .map(|_| font::CHARSET[rng.random_range(0..font::CHARSET.len())] as char)
            .collect();
        // shrink the font as the remaining budget gets small
        let max_scale = if attempts > 200 { 1 } else { 4 };
        let scale = rng.random_range(1..=max_scale);
        let x0 = rng.random_range(-(width as i64) / 4..width as i64) as isize;
        let y0 = rng.random_range(-((font::GLYPH_H * scale) as i64) / 2..height as i64) as isize;
        let mut cells = Vec::new();
        font::rasterize(&text, x0, y0, scale, |x, yy| {
            if x >= 0 && yy >= 0 && (x as usize) < width && (yy as usize) < height {
                cells.push(yy as usize * width + x as usize);
            }
        });
        cells.sort_unstable();
        cells.dedup();
        let fresh = cells.iter().filter(|&&i| owner[i].is_none()).count();
        if fresh == 0 || covered + fresh > limit {
            continue;
        }
        let id = colors.len();
        colors.push((0..channels).map(|_| rng.random_range(0..=256u32) as f32 / 256.0).collect());
        strings.push(text);
        for i in cells {
            owner[i] = Some(id);
        }
        covered += fresh;
    }
    TextOverlay {
        owner,
        colors,
        strings,
    }
}

/// Opaque random-text overlay covering a fraction `p` of the pixels.
pub fn add_text(y: &Image, p: f64, rng: &mut impl Rng) -> DegradedSample {
    assert!((0.0..=1.0).contains(&p), "p must lie in [0, 1]");
    let (w, h, ch) = y.dims();
    let overlay = render_text(w, h, ch, p, rng);
    let mut targets = vec![None; w * h * ch];
    for (i, o) in overlay.owner.iter().enumerate() {
        if let Some(id) = *o {
            for c in 0..ch {
                targets[c * w * h + i] = Some(overlay.colors[id][c]);
            }
        }
    }
    compose(y, replacement_noise(y, &targets))
}

/// `z = ln(x + LOG_EPS)`
pub fn log_domain(x: &Image) -> Image {
    x.map(|v| (v + LOG_EPS).ln())
}

/// Inverse of [`log_domain`].
pub fn exp_domain(z: &Image) -> Image {
    z.map(|v| v.exp() - LOG_EPS)
}

/// Noise transplantation `d = c + ñ`, unclamped. Exact (so `d - c == ñ`)
/// whenever both operands are lattice-aligned.
pub fn transplant<T: Scalar>(c: &Tensor<T>, n_tilde: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    c.zip_with(n_tilde, "transplant", |a, b| a + b)
}

/// Child RNG stream for item `index` of a seeded job, independent of how
/// many other items are processed.
pub fn item_rng(seed: u64, index: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform `u64` for deriving sub-seeds.
pub fn next_seed(rng: &mut impl RngCore) -> u64 {
    rng.next_u64()
}
