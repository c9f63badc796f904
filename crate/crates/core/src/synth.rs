//! Procedural grayscale scenes used as a stand-in for natural-image corpora.
//!
//! A scene is a smooth shaded background with a handful of overlapping
//! shapes (flat, shaded or striped), quantized to 8-bit levels. That gives
//! the mix of flat regions, edges and fine texture a denoiser has to trade
//! off, at any size and from a single seed.

use rand::Rng;

use crate::image::Image;
use crate::noise::item_rng;

#[derive(Debug, Clone, Copy)]
enum Fill {
    Flat(f32),
    Shaded { base: f32, gx: f32, gy: f32 },
    Stripes { base: f32, amp: f32, fx: f32, fy: f32 },
}

impl Fill {
    fn at(&self, x: f32, y: f32) -> f32 {
        match *self {
            Fill::Flat(v) => v,
            Fill::Shaded { base, gx, gy } => base + gx * x + gy * y,
            Fill::Stripes { base, amp, fx, fy } => base + amp * (fx * x + fy * y).sin(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { x0: f32, y0: f32, x1: f32, y1: f32 },
    Ellipse { cx: f32, cy: f32, rx: f32, ry: f32 },
    HalfPlane { nx: f32, ny: f32, offset: f32 },
}

impl Shape {
    fn contains(&self, x: f32, y: f32) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }
            Shape::HalfPlane { nx, ny, offset } => nx * x + ny * y > offset,
        }
    }
}

fn random_fill(rng: &mut impl Rng, w: f32) -> Fill {
    let base = rng.random_range(0.1f32..0.9);
    match rng.random_range(0..3) {
        0 => Fill::Flat(base),
        1 => Fill::Shaded {
            base,
            gx: rng.random_range(-0.3f32..0.3) / w,
            gy: rng.random_range(-0.3f32..0.3) / w,
        },
        _ => {
            let period = rng.random_range(3.0f32..10.0);
            let angle = rng.random_range(0.0f32..std::f32::consts::PI);
            let f = std::f32::consts::TAU / period;
            Fill::Stripes {
                base,
                amp: rng.random_range(0.05f32..0.15),
                fx: f * angle.cos(),
                fy: f * angle.sin(),
            }
        }
    }
}

/// One `width x height` scene drawn from `rng`.
pub fn scene(width: usize, height: usize, rng: &mut impl Rng) -> Image {
    let (w, h) = (width as f32, height as f32);
    let background = Fill::Shaded {
        base: rng.random_range(0.2f32..0.8),
        gx: rng.random_range(-0.4f32..0.4) / w,
        gy: rng.random_range(-0.4f32..0.4) / h,
    };
    let count = rng.random_range(4..=9);
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let shape = match rng.random_range(0..5) {
            0 | 1 => {
                let (x0, y0) = (rng.random_range(-0.1 * w..0.9 * w), rng.random_range(-0.1 * h..0.9 * h));
                Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + rng.random_range(0.1 * w..0.6 * w),
                    y1: y0 + rng.random_range(0.1 * h..0.6 * h),
                }
            }
            2 | 3 => Shape::Ellipse {
                cx: rng.random_range(0.0..w),
                cy: rng.random_range(0.0..h),
                rx: rng.random_range(0.05 * w..0.35 * w),
                ry: rng.random_range(0.05 * h..0.35 * h),
            },
            _ => {
                let angle = rng.random_range(0.0f32..std::f32::consts::TAU);
                let (nx, ny) = (angle.cos(), angle.sin());
                let px = rng.random_range(0.2 * w..0.8 * w);
                let py = rng.random_range(0.2 * h..0.8 * h);
                Shape::HalfPlane {
                    nx,
                    ny,
                    offset: nx * px + ny * py,
                }
            }
        };
        layers.push((shape, random_fill(rng, w.max(h))));
    }
    Image::from_fn(width, height, |x, y| {
        let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
        let fill = layers
            .iter()
            .rev()
            .find(|(s, _)| s.contains(fx, fy))
            .map_or(background, |(_, f)| *f);
        (fill.at(fx, fy).clamp(0.0, 1.0) * 255.0).round() / 255.0
    })
}

/// `count` scenes, item `i` drawn from its own stream of `seed`.
pub fn corpus(count: usize, width: usize, height: usize, seed: u64) -> Vec<Image> {
    (0..count)
        .map(|i| scene(width, height, &mut item_rng(seed, i as u64)))
        .collect()
}
