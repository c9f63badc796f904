//! Classical smoothing filters used to manufacture blurred labels.
//!
//! All filters work per channel over a `k x k` window with replicate
//! (edge-clamped) padding and accumulate in `f64`.

use serde::{Deserialize, Serialize};

use crate::image::{Image, ImageError};
use crate::lattice;

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("kernel size {0} must be odd and >= 3")]
    KernelSize(usize),
    #[error("{name} must be positive and finite, got {value}")]
    Sigma { name: &'static str, value: f64 },
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Mean,
    Gaussian,
    Median,
    Bilateral,
}

impl std::str::FromStr for FilterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Self::Mean),
            "gaussian" => Ok(Self::Gaussian),
            "median" => Ok(Self::Median),
            "bilateral" => Ok(Self::Bilateral),
            other => Err(format!("unknown filter `{other}`")),
        }
    }
}

pub const DEFAULT_SIGMA_RANGE: f64 = 0.1;

/// Label filter description. Unset sigmas resolve to `k/6` (spatial) and
/// [`DEFAULT_SIGMA_RANGE`] (range).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub kernel_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_spatial: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_range: Option<f64>,
}

impl FilterSpec {
    pub fn new(kind: FilterKind, kernel_size: usize) -> Self {
        Self {
            kind,
            kernel_size,
            gaussian_sigma: None,
            sigma_spatial: None,
            sigma_range: None,
        }
    }

    pub fn bilateral(kernel_size: usize, sigma_spatial: f64, sigma_range: f64) -> Self {
        Self {
            sigma_spatial: Some(sigma_spatial),
            sigma_range: Some(sigma_range),
            ..Self::new(FilterKind::Bilateral, kernel_size)
        }
    }

    pub fn gaussian(kernel_size: usize, sigma: f64) -> Self {
        Self {
            gaussian_sigma: Some(sigma),
            ..Self::new(FilterKind::Gaussian, kernel_size)
        }
    }

    fn default_spatial(&self) -> f64 {
        self.kernel_size as f64 / 6.0
    }

    pub fn resolved_gaussian_sigma(&self) -> f64 {
        self.gaussian_sigma.unwrap_or_else(|| self.default_spatial())
    }

    pub fn resolved_sigma_spatial(&self) -> f64 {
        self.sigma_spatial.unwrap_or_else(|| self.default_spatial())
    }

    pub fn resolved_sigma_range(&self) -> f64 {
        self.sigma_range.unwrap_or(DEFAULT_SIGMA_RANGE)
    }

    /// Fills every unset sigma with its default.
    pub fn resolved(&self) -> Self {
        let mut out = *self;
        match self.kind {
            FilterKind::Gaussian => out.gaussian_sigma = Some(self.resolved_gaussian_sigma()),
            FilterKind::Bilateral => {
                out.sigma_spatial = Some(self.resolved_sigma_spatial());
                out.sigma_range = Some(self.resolved_sigma_range());
            }
            FilterKind::Mean | FilterKind::Median => {}
        }
        out
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        check_kernel(self.kernel_size)?;
        match self.kind {
            FilterKind::Gaussian => check_sigma("gaussian_sigma", self.resolved_gaussian_sigma()),
            FilterKind::Bilateral => {
                check_sigma("sigma_spatial", self.resolved_sigma_spatial())?;
                check_sigma("sigma_range", self.resolved_sigma_range())
            }
            FilterKind::Mean | FilterKind::Median => Ok(()),
        }
    }

    pub fn apply(&self, img: &Image) -> Result<Image, FilterError> {
        self.validate()?;
        let k = self.kernel_size;
        match self.kind {
            FilterKind::Mean => mean_filter(img, k),
            FilterKind::Gaussian => gaussian_filter(img, k, self.resolved_gaussian_sigma()),
            FilterKind::Median => median_filter(img, k),
            FilterKind::Bilateral => {
                bilateral_filter(img, k, self.resolved_sigma_spatial(), self.resolved_sigma_range())
            }
        }
    }
}

fn check_kernel(k: usize) -> Result<(), FilterError> {
    if k < 3 || k.is_multiple_of(2) {
        return Err(FilterError::KernelSize(k));
    }
    Ok(())
}

fn check_sigma(name: &'static str, value: f64) -> Result<(), FilterError> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(FilterError::Sigma { name, value });
    }
    Ok(())
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable pass pair with a symmetric 1-D kernel and replicate padding.
fn separable(img: &Image, taps: &[f64]) -> Image {
    let (w, h, ch) = img.dims();
    let r = (taps.len() / 2) as isize;
    let mut out = img.clone();
    let mut tmp = vec![0.0f64; w * h];
    for c in 0..ch {
        let src = img.plane(c);
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for x in 0..w {
                let mut acc = 0.0;
                for (t, &kv) in taps.iter().enumerate() {
                    acc += kv * row[clamp_index(x as isize + t as isize - r, w)] as f64;
                }
                tmp[y * w + x] = acc;
            }
        }
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, &kv) in taps.iter().enumerate() {
                    acc += kv * tmp[clamp_index(y as isize + t as isize - r, h) * w + x];
                }
                dst[y * w + x] = acc as f32;
            }
        }
    }
    out
}

/// Box average over the `k x k` window.
pub fn mean_filter(img: &Image, k: usize) -> Result<Image, FilterError> {
    check_kernel(k)?;
    Ok(separable(img, &vec![1.0 / k as f64; k]))
}

fn gaussian_taps(k: usize, sigma: f64) -> Vec<f64> {
    let r = (k / 2) as f64;
    let raw: Vec<f64> = (0..k)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Normalized `k x k` Gaussian kernel, row-major.
pub fn gaussian_kernel(k: usize, sigma: f64) -> Result<Vec<f64>, FilterError> {
    check_kernel(k)?;
    check_sigma("gaussian_sigma", sigma)?;
    let taps = gaussian_taps(k, sigma);
    Ok(taps.iter().flat_map(|a| taps.iter().map(move |b| a * b)).collect())
}

pub fn gaussian_filter(img: &Image, k: usize, sigma: f64) -> Result<Image, FilterError> {
    check_kernel(k)?;
    check_sigma("gaussian_sigma", sigma)?;
    Ok(separable(img, &gaussian_taps(k, sigma)))
}

pub fn median_filter(img: &Image, k: usize) -> Result<Image, FilterError> {
    check_kernel(k)?;
    let (w, h, ch) = img.dims();
    let r = (k / 2) as isize;
    let mut out = img.clone();
    let mut window = Vec::with_capacity(k * k);
    for c in 0..ch {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                window.clear();
                for dy in -r..=r {
                    let row = clamp_index(y as isize + dy, h) * w;
                    for dx in -r..=r {
                        window.push(src[row + clamp_index(x as isize + dx, w)]);
                    }
                }
                let mid = window.len() / 2;
                let (_, m, _) = window.select_nth_unstable_by(mid, f32::total_cmp);
                dst[y * w + x] = *m;
            }
        }
    }
    Ok(out)
}

/// Edge-preserving weighted average with spatial and range Gaussian weights.
pub fn bilateral_filter(img: &Image, k: usize, sigma_spatial: f64, sigma_range: f64) -> Result<Image, FilterError> {
    check_kernel(k)?;
    check_sigma("sigma_spatial", sigma_spatial)?;
    check_sigma("sigma_range", sigma_range)?;
    let (w, h, ch) = img.dims();
    let r = (k / 2) as isize;
    let spatial: Vec<f64> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| ((dy * dy + dx * dx) as f64) / (2.0 * sigma_spatial * sigma_spatial)))
        .map(|e| (-e).exp())
        .collect();
    let inv_range = 1.0 / (2.0 * sigma_range * sigma_range);
    let mut out = img.clone();
    for c in 0..ch {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let center = src[y * w + x] as f64;
                let (mut num, mut den) = (0.0, 0.0);
                let mut s = spatial.iter();
                for dy in -r..=r {
                    let row = clamp_index(y as isize + dy, h) * w;
                    for dx in -r..=r {
                        let q = src[row + clamp_index(x as isize + dx, w)] as f64;
                        let d = q - center;
                        let wgt = s.next().expect("window size") * (-d * d * inv_range).exp();
                        num += wgt * q;
                        den += wgt;
                    }
                }
                dst[y * w + x] = (num / den) as f32;
            }
        }
    }
    Ok(out)
}

/// Blurred label `y_b = filter(x)` and residual `n_b = x - y_b`.
///
/// `y_b` is snapped to the [`lattice`], so for lattice-aligned `x` the
/// residual is exact and `y_b + n_b == x` holds bit for bit.
pub fn make_blurred_label(x: &Image, spec: &FilterSpec) -> Result<(Image, Image), FilterError> {
    let y_b = lattice::snap_image(&spec.apply(x)?);
    let n_b = x.sub(&y_b)?;
    Ok((y_b, n_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.random::<f32>())
    }

    /// Direct 2-D weighted sum with replicate padding.
    fn oracle_conv(img: &Image, k: usize, kernel: &[f64]) -> Vec<f64> {
        let (w, h, _) = img.dims();
        let r = (k / 2) as isize;
        let mut out = vec![0.0; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                        let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                        acc += kernel[((dy + r) * k as isize + dx + r) as usize] * img.get(0, xx, yy) as f64;
                    }
                }
                out[y as usize * w + x as usize] = acc;
            }
        }
        out
    }

    fn assert_close(img: &Image, want: &[f64], tol: f64) {
        for (a, b) in img.pixels().iter().zip(want) {
            assert!((*a as f64 - b).abs() < tol, "{a} vs {b}");
        }
    }

    #[test]
    fn constants_are_fixed_points() {
        let img = Image::filled(12, 9, 3, 0.37);
        for spec in [
            FilterSpec::new(FilterKind::Mean, 5),
            FilterSpec::new(FilterKind::Gaussian, 7),
            FilterSpec::new(FilterKind::Median, 3),
            FilterSpec::new(FilterKind::Bilateral, 9),
        ] {
            let out = spec.apply(&img).unwrap();
            for &v in out.pixels() {
                assert!((v - 0.37).abs() < 1e-7, "{spec:?}");
            }
        }
    }

    #[test]
    fn mean_impulse_gives_plateau() {
        let mut img = Image::filled(7, 7, 1, 0.0);
        img.set(0, 3, 3, 1.0);
        let out = mean_filter(&img, 3).unwrap();
        for y in 0..7 {
            for x in 0..7 {
                let want = if (2..=4).contains(&x) && (2..=4).contains(&y) { 1.0 / 9.0 } else { 0.0 };
                assert!((out.get(0, x, y) - want).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn mean_of_noise_shrinks_std_by_k() {
        use rand_distr::{Distribution, Normal};
        let sigma = 25.0 / 255.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, sigma).unwrap();
        let img = Image::from_fn(160, 160, |_, _| normal.sample(&mut rng) as f32);
        let out = mean_filter(&img, 31).unwrap();
        // interior pixels only
        let inner = out.crop(15, 15, 130, 130);
        let ratio = inner.std() / (sigma / 31.0);
        assert!((0.8..1.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn mean_and_gaussian_match_direct_oracle() {
        for seed in 0..3 {
            let img = random_image(16 + seed as usize * 5, 16 + seed as usize * 3, seed);
            let box_kernel = vec![1.0 / 25.0; 25];
            assert_close(&mean_filter(&img, 5).unwrap(), &oracle_conv(&img, 5, &box_kernel), 1e-6);
            let kern = gaussian_kernel(7, 1.3).unwrap();
            assert!((kern.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert_close(&gaussian_filter(&img, 7, 1.3).unwrap(), &oracle_conv(&img, 7, &kern), 1e-6);
        }
    }

    #[test]
    fn median_removes_lone_salt() {
        let mut img = Image::filled(5, 5, 1, 0.0);
        img.set(0, 2, 2, 1.0);
        assert!(median_filter(&img, 3).unwrap().pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn median_matches_sorted_window_oracle() {
        let img = random_image(17, 16, 9);
        let out = median_filter(&img, 5).unwrap();
        for y in 0..16isize {
            for x in 0..17isize {
                let mut win = Vec::new();
                for dy in -2..=2 {
                    for dx in -2..=2 {
                        win.push(img.get(0, (x + dx).clamp(0, 16) as usize, (y + dy).clamp(0, 15) as usize));
                    }
                }
                win.sort_by(f32::total_cmp);
                assert_eq!(out.get(0, x as usize, y as usize), win[12]);
            }
        }
    }

    #[test]
    fn bilateral_matches_double_loop_oracle() {
        let img = random_image(16, 16, 4);
        let (k, ss, sr) = (5usize, 1.5, 0.2);
        let out = bilateral_filter(&img, k, ss, sr).unwrap();
        let r = 2isize;
        for y in 0..16isize {
            for x in 0..16isize {
                let ip = img.get(0, x as usize, y as usize) as f64;
                let (mut num, mut den) = (0.0, 0.0);
                for qy in y - r..=y + r {
                    for qx in x - r..=x + r {
                        let iq = img.get(0, qx.clamp(0, 15) as usize, qy.clamp(0, 15) as usize) as f64;
                        let dist2 = ((qy - y).pow(2) + (qx - x).pow(2)) as f64;
                        let wgt = (-dist2 / (2.0 * ss * ss)).exp() * (-(ip - iq).powi(2) / (2.0 * sr * sr)).exp();
                        num += wgt * iq;
                        den += wgt;
                    }
                }
                assert!((out.get(0, x as usize, y as usize) as f64 - num / den).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bilateral_degenerates_to_gaussian() {
        let img = random_image(16, 16, 2);
        let a = bilateral_filter(&img, 7, 1.7, 1e6).unwrap();
        let b = gaussian_filter(&img, 7, 1.7).unwrap();
        for (x, y) in a.pixels().iter().zip(b.pixels()) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn outputs_stay_within_input_range() {
        let img = random_image(20, 20, 11).map(|v| v * 0.5 + 0.2);
        let (lo, hi) = img.min_max();
        for kind in [FilterKind::Mean, FilterKind::Gaussian, FilterKind::Median, FilterKind::Bilateral] {
            let (olo, ohi) = FilterSpec::new(kind, 5).apply(&img).unwrap().min_max();
            assert!(olo >= lo - 1e-6 && ohi <= hi + 1e-6, "{kind:?}");
        }
    }

    #[test]
    fn even_or_tiny_kernels_rejected() {
        let img = Image::filled(8, 8, 1, 0.0);
        assert!(matches!(mean_filter(&img, 4), Err(FilterError::KernelSize(4))));
        assert!(matches!(median_filter(&img, 1), Err(FilterError::KernelSize(1))));
        assert!(matches!(gaussian_filter(&img, 3, 0.0), Err(FilterError::Sigma { .. })));
        assert!(bilateral_filter(&img, 6, 1.0, 1.0).is_err());
    }

    #[test]
    fn label_recomposes_exactly() {
        let x = lattice::snap_image(&random_image(24, 24, 1).map(|v| v * 1.4 - 0.2));
        let (y_b, n_b) = make_blurred_label(&x, &FilterSpec::new(FilterKind::Bilateral, 7)).unwrap();
        assert_eq!(y_b.add(&n_b).unwrap(), x);

        let flat = Image::filled(16, 16, 1, 0.5);
        let (y_b, n_b) = make_blurred_label(&flat, &FilterSpec::new(FilterKind::Median, 5)).unwrap();
        assert_eq!(y_b, flat);
        assert!(n_b.pixels().iter().all(|&v| v == 0.0));
    }
}
