//! Shared helpers for integration tests: independent brute-force oracles,
//! a finite-difference gradient checker and desk-run fixtures.

#![allow(dead_code)]

pub mod checks;
pub mod ops;

use n2b::filters::FilterSpec;
use n2b::image::Image;
use n2b::metrics::{psnr, SSIM_C1, SSIM_C2};
use n2b::n2b::{StepRecord, TrainData, TrainSettings, UNetConfig, Variant};
use n2b::noise::{add_gaussian, item_rng};
use n2b::synth;
use n2b::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(w: usize, h: usize, seed: u64) -> Image {
    let mut r = rng(seed);
    Image::from_fn(w, h, |_, _| r.random::<f32>())
}

fn px(img: &Image, x: isize, y: isize) -> f64 {
    let cx = x.clamp(0, img.width() as isize - 1) as usize;
    let cy = y.clamp(0, img.height() as isize - 1) as usize;
    img.get(0, cx, cy) as f64
}

/// Replicate-padded 2-D window sum, computed directly per output pixel.
fn direct(img: &Image, k: usize, mut f: impl FnMut(&Image, usize, usize, Vec<(isize, isize, f64)>) -> f64) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut out = Vec::new();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let mut win = Vec::with_capacity(k * k);
            for dy in -r..=r {
                for dx in -r..=r {
                    win.push((dx, dy, px(img, x as isize + dx, y as isize + dy)));
                }
            }
            out.push(f(img, x, y, win));
        }
    }
    out
}

pub fn oracle_mean(img: &Image, k: usize) -> Vec<f64> {
    direct(img, k, |_, _, _, w| w.iter().map(|t| t.2).sum::<f64>() / w.len() as f64)
}

pub fn oracle_gaussian(img: &Image, k: usize, sigma: f64) -> Vec<f64> {
    direct(img, k, |_, _, _, w| {
        let (mut num, mut den) = (0.0, 0.0);
        for (dx, dy, v) in w {
            let g = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            num += g * v;
            den += g;
        }
        num / den
    })
}

pub fn oracle_median(img: &Image, k: usize) -> Vec<f64> {
    direct(img, k, |_, _, _, w| {
        let mut v: Vec<f64> = w.iter().map(|t| t.2).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    })
}

pub fn oracle_bilateral(img: &Image, k: usize, ss: f64, sr: f64) -> Vec<f64> {
    direct(img, k, |img, x, y, w| {
        let centre = img.get(0, x, y) as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for (dx, dy, v) in w {
            let d2 = (dx * dx + dy * dy) as f64;
            let wgt = (-d2 / (2.0 * ss * ss) - (v - centre).powi(2) / (2.0 * sr * sr)).exp();
            num += wgt * v;
            den += wgt;
        }
        num / den
    })
}

pub fn oracle_psnr(a: &Image, b: &Image) -> f64 {
    let n = a.pixels().len() as f64;
    let mse: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
        .sum::<f64>()
        / n;
    10.0 * (1.0 / mse).log10()
}

/// SSIM by explicit 11x11 weighted sums at each valid window position.
pub fn oracle_ssim(a: &Image, b: &Image) -> f64 {
    let (k, sigma) = (11usize, 1.5f64);
    let r = (k / 2) as f64;
    let mut wts = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (dy, dx) = (i as f64 - r, j as f64 - r);
            wts[i * k + j] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = wts.iter().sum();
    wts.iter_mut().for_each(|w| *w /= total);
    let mut acc = 0.0;
    let mut count = 0usize;
    for y0 in 0..=a.height() - k {
        for x0 in 0..=a.width() - k {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let w = wts[i * k + j];
                    let p = a.get(0, x0 + j, y0 + i) as f64;
                    let q = b.get(0, x0 + j, y0 + i) as f64;
                    ma += w * p;
                    mb += w * q;
                    saa += w * p * p;
                    sbb += w * q * q;
                    sab += w * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            acc += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
        }
    }
    acc / count as f64
}

pub fn max_abs_diff(img: &Image, oracle: &[f64]) -> f64 {
    img.pixels()
        .iter()
        .zip(oracle)
        .map(|(&a, &b)| (a as f64 - b).abs())
        .fold(0.0, f64::max)
}

/// Random tensor with every entry at least `gap` away from zero.
pub fn away_from_zero(shape: &[usize], gap: f64, r: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = r.random_range(gap..1.0);
        if r.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

pub fn uniform(shape: &[usize], r: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

/// Maximum elementwise relative error between analytic and central
/// finite-difference gradients of `build(graph, inputs) -> scalar` with
/// respect to every input.
pub fn gradcheck(inputs: &[Tensor<f64>], build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    const H: f64 = 1e-5;
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    let grads = g.backward(out).expect("scalar output");
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = grads
            .get(vars[i])
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![0.0; t.numel()]);
        for (j, &a) in analytic.iter().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// `sum(out * weights)` so every output element gets a distinct upstream
/// gradient.
pub fn weighted_sum(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let mut r = rng(seed);
    let w = uniform(g.value(out).shape(), &mut r);
    let wv = g.constant(w);
    let p = g.mul(out, wv).unwrap();
    g.sum(p).unwrap()
}

/// The desk-scale Gaussian experiment: sizes, seeds and corpora.
pub struct DeskSetup {
    pub sources: Vec<Image>,
    pub clean: Vec<Image>,
    pub test_clean: Vec<Image>,
    pub test_noisy: Vec<Image>,
}

pub const DESK_SIGMA: f64 = 25.0;
pub const DESK_SIZE: usize = 64;

pub fn gaussian_noisy(images: &[Image], sigma: f64, seed: u64) -> Vec<Image> {
    images
        .iter()
        .enumerate()
        .map(|(i, y)| add_gaussian(y, sigma, &mut item_rng(seed, i as u64)).noisy)
        .collect()
}

pub fn desk_setup() -> DeskSetup {
    let test_clean = synth::corpus(8, DESK_SIZE, DESK_SIZE, 300);
    DeskSetup {
        sources: synth::corpus(20, DESK_SIZE, DESK_SIZE, 100),
        clean: synth::corpus(20, DESK_SIZE, DESK_SIZE, 200),
        test_noisy: gaussian_noisy(&test_clean, DESK_SIGMA, 2),
        test_clean,
    }
}

pub fn desk_data(setup: &DeskSetup, filter: &FilterSpec) -> TrainData {
    let noisy = gaussian_noisy(&setup.sources, DESK_SIGMA, 1);
    TrainData::prepare(noisy, setup.clean.clone(), Some(setup.sources.clone()), filter, false).unwrap()
}

pub fn desk_settings(variant: Variant, iterations: u64, base_width: usize) -> TrainSettings {
    TrainSettings {
        iterations,
        seed: 5,
        variant,
        unet: UNetConfig::new(1, 3, base_width),
        ..TrainSettings::default()
    }
}

pub fn mean_psnr(test: &[Image], reference: &[Image]) -> f64 {
    test.iter().zip(reference).map(|(t, r)| psnr(t, r).unwrap().db()).sum::<f64>() / test.len() as f64
}

/// Least-squares slope of `ys` against their index.
pub fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        num += dx * (y - my);
        den += dx * dx;
    }
    num / den
}

pub fn decile_means(ys: &[f64]) -> (f64, f64) {
    let n = (ys.len() / 10).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&ys[..n]), mean(&ys[ys.len() - n..]))
}

pub fn convergence_series(curve: &[StepRecord]) -> (Vec<f64>, Vec<f64>) {
    curve
        .iter()
        .filter_map(|r| r.l_n2c.map(|c| (r.l_n2b, c)))
        .unzip()
}
