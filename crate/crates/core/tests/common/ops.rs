//! Finite-difference cases for every differentiable op. Each case maps an
//! instance seed to the worst relative gradient error on that instance.

use super::{away_from_zero, gradcheck, rng, uniform, weighted_sum};
use n2b::tensor::Tensor;
use rand::Rng;

pub const INSTANCES: u64 = 20;
pub const TOL: f64 = 1e-4;

pub type Case = (&'static str, fn(u64) -> f64);

fn small_shape(r: &mut impl Rng) -> Vec<usize> {
    vec![r.random_range(1..3), r.random_range(1..4), r.random_range(2..5), r.random_range(2..5)]
}

/// Values on a coarse grid, so every pooling window has a unique maximum
/// well separated from the runner-up.
fn distinct_values(shape: &[usize], r: &mut impl Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, r.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), perm.iter().map(|&p| p as f64 * 0.01).collect()).unwrap()
}

fn add(s: u64) -> f64 {
    let mut r = rng(s);
    let sh = small_shape(&mut r);
    gradcheck(&[uniform(&sh, &mut r), uniform(&sh, &mut r)], |g, v| {
        let o = g.add(v[0], v[1]).unwrap();
        weighted_sum(g, o, s)
    })
}

fn sub(s: u64) -> f64 {
    let mut r = rng(100 + s);
    let sh = small_shape(&mut r);
    gradcheck(&[uniform(&sh, &mut r), uniform(&sh, &mut r)], |g, v| {
        let o = g.sub(v[0], v[1]).unwrap();
        weighted_sum(g, o, s)
    })
}

fn mul(s: u64) -> f64 {
    let mut r = rng(200 + s);
    let sh = small_shape(&mut r);
    gradcheck(&[uniform(&sh, &mut r), uniform(&sh, &mut r)], |g, v| {
        let o = g.mul(v[0], v[1]).unwrap();
        weighted_sum(g, o, s)
    })
}

fn scalar_add(s: u64) -> f64 {
    let mut r = rng(300 + s);
    let sh = small_shape(&mut r);
    let c = r.random_range(-2.0..2.0);
    gradcheck(&[uniform(&sh, &mut r)], |g, v| {
        let o = g.scalar_add(v[0], c).unwrap();
        weighted_sum(g, o, s)
    })
}

fn scalar_mul(s: u64) -> f64 {
    let mut r = rng(400 + s);
    let sh = small_shape(&mut r);
    let c = r.random_range(-2.0..2.0);
    gradcheck(&[uniform(&sh, &mut r)], |g, v| {
        let o = g.scalar_mul(v[0], c).unwrap();
        weighted_sum(g, o, s)
    })
}

/// Input, weight and bias, with random kernel size, stride and padding.
fn conv2d(s: u64) -> f64 {
    let mut r = rng(500 + s);
    let (n, c, o) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
    let k = [1, 3, 5][r.random_range(0..3)];
    let stride = r.random_range(1..3);
    let padding = r.random_range(0..=k / 2);
    let (h, w) = (r.random_range(k..k + 4), r.random_range(k..k + 4));
    let inputs = [
        uniform(&[n, c, h, w], &mut r),
        uniform(&[o, c, k, k], &mut r),
        uniform(&[o], &mut r),
    ];
    gradcheck(&inputs, |g, v| {
        let y = g.conv2d(v[0], v[1], v[2], stride, padding).unwrap();
        weighted_sum(g, y, s)
    })
}

/// Inputs kept away from the kink at zero.
fn leaky_relu(s: u64) -> f64 {
    let mut r = rng(600 + s);
    let sh = small_shape(&mut r);
    let slope = r.random_range(0.0..0.5);
    gradcheck(&[away_from_zero(&sh, 1e-3, &mut r)], |g, v| {
        let o = g.leaky_relu(v[0], slope).unwrap();
        weighted_sum(g, o, s)
    })
}

fn maxpool2(s: u64) -> f64 {
    let mut r = rng(700 + s);
    let sh = vec![r.random_range(1..3), r.random_range(1..3), 2 * r.random_range(1..4), 2 * r.random_range(1..4)];
    gradcheck(&[distinct_values(&sh, &mut r)], |g, v| {
        let o = g.maxpool2(v[0]).unwrap();
        weighted_sum(g, o, s)
    })
}

fn upsample2_nearest(s: u64) -> f64 {
    let mut r = rng(800 + s);
    let sh = small_shape(&mut r);
    gradcheck(&[uniform(&sh, &mut r)], |g, v| {
        let o = g.upsample2_nearest(v[0]).unwrap();
        weighted_sum(g, o, s)
    })
}

fn concat_channels(s: u64) -> f64 {
    let mut r = rng(900 + s);
    let (n, h, w) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
    let a = uniform(&[n, r.random_range(1..4), h, w], &mut r);
    let b = uniform(&[n, r.random_range(1..4), h, w], &mut r);
    gradcheck(&[a, b], |g, v| {
        let o = g.concat_channels(v[0], v[1]).unwrap();
        weighted_sum(g, o, s)
    })
}

/// Prediction and target kept apart so no residual sits on the kink.
fn l1_loss(s: u64) -> f64 {
    let mut r = rng(1000 + s);
    let sh = small_shape(&mut r);
    let target = uniform(&sh, &mut r);
    let diff = away_from_zero(&sh, 1e-3, &mut r);
    let pred = target.zip_with(&diff, "test", |a, b| a + b).unwrap();
    gradcheck(&[pred, target], |g, v| g.l1_loss(v[0], v[1]).unwrap())
}

fn sum(s: u64) -> f64 {
    let mut r = rng(1100 + s);
    let sh = small_shape(&mut r);
    gradcheck(&[uniform(&sh, &mut r)], |g, v| {
        let sq = g.mul(v[0], v[0]).unwrap();
        g.sum(sq).unwrap()
    })
}

/// Six chained ops: conv, leaky ReLU, maxpool, upsample, concat, conv,
/// then an L1 loss against a fixed target.
fn composite(s: u64) -> f64 {
    let mut r = rng(1200 + s);
    let (n, c, h, w) = (r.random_range(1..3), r.random_range(1..3), 4, 4);
    let inputs = [
        uniform(&[n, c, h, w], &mut r),
        uniform(&[2, c, 3, 3], &mut r),
        uniform(&[2], &mut r),
        uniform(&[1, 2 + c, 3, 3], &mut r),
        uniform(&[1], &mut r),
    ];
    let target = uniform(&[n, 1, h, w], &mut r);
    gradcheck(&inputs, |g, v| {
        let a = g.conv2d(v[0], v[1], v[2], 1, 1).unwrap();
        let a = g.leaky_relu(a, 0.1).unwrap();
        let p = g.maxpool2(a).unwrap();
        let u = g.upsample2_nearest(p).unwrap();
        let cat = g.concat_channels(u, v[0]).unwrap();
        let out = g.conv2d(cat, v[3], v[4], 1, 1).unwrap();
        let t = g.constant(target.clone());
        g.l1_loss(out, t).unwrap()
    })
}

pub const CASES: &[Case] = &[
    ("add", add),
    ("sub", sub),
    ("mul", mul),
    ("scalar_add", scalar_add),
    ("scalar_mul", scalar_mul),
    ("conv2d", conv2d),
    ("leaky_relu", leaky_relu),
    ("maxpool2", maxpool2),
    ("upsample2_nearest", upsample2_nearest),
    ("concat_channels", concat_channels),
    ("l1_loss", l1_loss),
    ("sum", sum),
    ("composite", composite),
];

/// Worst error of `case` over all instances.
pub fn worst(case: fn(u64) -> f64) -> f64 {
    (0..INSTANCES).map(case).fold(0.0, f64::max)
}
