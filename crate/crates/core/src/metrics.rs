//! PSNR and single-scale SSIM on `[0, 1]` intensities.

use std::fmt;

use crate::image::{Image, ImageError};

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error(transparent)]
    Shape(#[from] ImageError),
    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    TooSmall { width: usize, height: usize, window: usize },
}

/// Peak signal-to-noise ratio. Identical inputs give [`Psnr::Infinite`].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    /// Value in dB, with `f64::INFINITY` for the identical case.
    pub fn db(self) -> f64 {
        match self {
            Self::Finite(v) => v,
            Self::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Self::Infinite)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite(v) => write!(f, "{v:.4}"),
            Self::Infinite => f.write_str("inf"),
        }
    }
}

pub fn mse(test: &Image, reference: &Image) -> Result<f64, MetricError> {
    test.expect_same_shape(reference)?;
    let n = test.pixels().len().max(1) as f64;
    Ok(test
        .pixels()
        .iter()
        .zip(reference.pixels())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / n)
}

/// `10 log10(1 / MSE)` with a peak of 1.0.
pub fn psnr(test: &Image, reference: &Image) -> Result<Psnr, MetricError> {
    let m = mse(test, reference)?;
    Ok(if m == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Finite(-10.0 * m.log10())
    })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn window_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = taps.iter().sum();
    taps.map(|t| t / total)
}

/// Separable "valid" Gaussian filtering of a `w x h` plane.
fn valid_blur(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (wo, ho) = (w + 1 - k, h + 1 - k);
    let mut rows = vec![0.0; wo * h];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = taps.iter().enumerate().map(|(t, kv)| kv * plane[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; wo * ho];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = taps.iter().enumerate().map(|(t, kv)| kv * rows[(y + t) * wo + x]).sum();
        }
    }
    out
}

/// Per-window SSIM map of one channel (valid windows only).
pub fn ssim_map(test: &Image, reference: &Image, channel: usize) -> Result<Vec<f64>, MetricError> {
    test.expect_same_shape(reference)?;
    let (w, h, _) = test.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let taps = window_taps();
    let a: Vec<f64> = test.plane(channel).iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = reference.plane(channel).iter().map(|&v| v as f64).collect();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(&b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = valid_blur(&a, w, h, &taps);
    let mu_b = valid_blur(&b, w, h, &taps);
    let aa = valid_blur(&prod(&|x, _| x * x), w, h, &taps);
    let bb = valid_blur(&prod(&|_, y| y * y), w, h, &taps);
    let ab = valid_blur(&prod(&|x, y| x * y), w, h, &taps);
    Ok((0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .collect())
}

/// Mean SSIM over the map, averaged over channels.
pub fn ssim(test: &Image, reference: &Image) -> Result<f64, MetricError> {
    let channels = test.channels();
    let mut total = 0.0;
    for c in 0..channels {
        let map = ssim_map(test, reference, c)?;
        total += map.iter().sum::<f64>() / map.len() as f64;
    }
    Ok(total / channels as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub name: String,
    pub psnr: Psnr,
    pub ssim: f64,
}

/// Corpus mean; PSNR is infinite if any entry is.
pub fn corpus_mean(reports: &[QualityReport]) -> (Psnr, f64) {
    let n = reports.len().max(1) as f64;
    let psnr = if reports.iter().any(|r| r.psnr.is_infinite()) {
        Psnr::Infinite
    } else {
        Psnr::Finite(reports.iter().map(|r| r.psnr.db()).sum::<f64>() / n)
    };
    (psnr, reports.iter().map(|r| r.ssim).sum::<f64>() / n)
}

pub fn evaluate(name: impl Into<String>, test: &Image, reference: &Image) -> Result<QualityReport, MetricError> {
    Ok(QualityReport {
        name: name.into(),
        psnr: psnr(test, reference)?,
        ssim: ssim(test, reference)?,
    })
}
