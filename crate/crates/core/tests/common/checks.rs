//! Filter, metric and noise-model measurements shared by the oracle tests
//! and the acceptance run.

use super::*;
use n2b::filters::{bilateral_filter, gaussian_filter, mean_filter, median_filter};
use n2b::metrics::ssim;
use n2b::noise::{add_salt_pepper, add_speckle};

pub const FILTER_TOL: f64 = 1e-6;
pub const SSIM_TOL: f64 = 1e-4;

/// Six random images between 16x16 and 32x32 with random odd kernels.
fn random_cases(seed: u64) -> impl Iterator<Item = (Image, usize)> {
    let mut r = rng(seed);
    (0..6).map(move |i| {
        let (w, h) = (r.random_range(16..=32), r.random_range(16..=32));
        let k = [3, 5, 7, 9][r.random_range(0..4)];
        (random_image(w, h, seed * 100 + i), k)
    })
}

fn worst(seed: u64, f: impl Fn(&Image, usize) -> f64) -> f64 {
    random_cases(seed).map(|(img, k)| f(&img, k)).fold(0.0, f64::max)
}

pub fn mean_error() -> f64 {
    worst(1, |img, k| max_abs_diff(&mean_filter(img, k).unwrap(), &oracle_mean(img, k)))
}

pub fn gaussian_error() -> f64 {
    worst(2, |img, k| {
        let sigma = k as f64 / 6.0 + 0.3;
        max_abs_diff(&gaussian_filter(img, k, sigma).unwrap(), &oracle_gaussian(img, k, sigma))
    })
}

pub fn median_error() -> f64 {
    worst(3, |img, k| max_abs_diff(&median_filter(img, k).unwrap(), &oracle_median(img, k)))
}

pub fn bilateral_error() -> f64 {
    worst(4, |img, k| {
        let (ss, sr) = (k as f64 / 6.0, 0.15);
        max_abs_diff(&bilateral_filter(img, k, ss, sr).unwrap(), &oracle_bilateral(img, k, ss, sr))
    })
}

/// Worst PSNR and SSIM deviations from the oracles on blended image pairs.
pub fn metric_errors() -> (f64, f64) {
    let mut r = rng(5);
    let (mut p_err, mut s_err) = (0.0f64, 0.0f64);
    for i in 0..6 {
        let (w, h) = (r.random_range(16..=32), r.random_range(16..=32));
        let a = random_image(w, h, 50 + i);
        let b = a.zip_with(&random_image(w, h, 80 + i), |p, q| 0.7 * p + 0.3 * q).unwrap();
        p_err = p_err.max((psnr(&b, &a).unwrap().db() - oracle_psnr(&b, &a)).abs());
        s_err = s_err.max((ssim(&b, &a).unwrap() - oracle_ssim(&b, &a)).abs());
    }
    (p_err, s_err)
}

/// Measured statistics of each noise model on seeded 256x256 instances.
pub struct NoiseStats {
    pub gaussian_std_255: f64,
    pub speckle_variance: f64,
    pub salt_pepper_fraction: f64,
}

pub fn noise_stats() -> NoiseStats {
    let y = Image::filled(256, 256, 1, 0.5);
    let g = add_gaussian(&y, 25.0, &mut rng(7));
    let one = Image::filled(256, 256, 1, 1.0);
    let s = add_speckle(&one, 0.1, &mut rng(8));
    let sp = add_salt_pepper(&y, 0.15, &mut rng(9));
    let replaced = sp.noisy.pixels().iter().filter(|&&v| v != 0.5).count();
    NoiseStats {
        gaussian_std_255: g.true_noise.std() * 255.0,
        speckle_variance: s.true_noise.std().powi(2),
        salt_pepper_fraction: replaced as f64 / (256.0 * 256.0),
    }
}

impl NoiseStats {
    pub fn gaussian_ok(&self) -> bool {
        (self.gaussian_std_255 / 25.0 - 1.0).abs() <= 0.02
    }

    pub fn speckle_ok(&self) -> bool {
        (self.speckle_variance / 0.1 - 1.0).abs() <= 0.05
    }

    pub fn salt_pepper_ok(&self) -> bool {
        (self.salt_pepper_fraction - 0.15).abs() <= 0.01
    }
}
