//! Fixed-point lattice for values that take part in exact identities.
//!
//! An `f32` has 24 significand bits. Two values that are integer multiples
//! of `2^-20` with magnitude below `2^4` add and subtract without rounding,
//! so `x == y_b + n_b` and `d - c == ñ` hold bit-exactly once every operand
//! is snapped here. The snapping error (at most `2^-21`) is far below 8-bit
//! quantization.

use crate::image::Image;

pub const LATTICE_BITS: i32 = 20;
/// Magnitude bound under which lattice arithmetic is exact.
pub const EXACT_RANGE: f32 = 16.0;

const SCALE: f64 = (1u64 << LATTICE_BITS) as f64;

pub fn snap(v: f32) -> f32 {
    ((v as f64 * SCALE).round() / SCALE) as f32
}

pub fn snap_image(img: &Image) -> Image {
    img.map(snap)
}

pub fn snap_slice(values: &mut [f32]) {
    for v in values {
        *v = snap(*v);
    }
}

/// Whether `v` lies on the lattice inside the exact range.
pub fn on_lattice(v: f32) -> bool {
    v.abs() < EXACT_RANGE && snap(v) == v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn sums_and_differences_are_exact(a in -7.9f32..7.9, b in -7.9f32..7.9) {
            let (a, b) = (snap(a), snap(b));
            prop_assert!(on_lattice(a) && on_lattice(b));
            let d = a - b;
            prop_assert_eq!(d + b, a);
            let s = a + b;
            prop_assert_eq!(s - a, b);
            prop_assert_eq!(a as f64 - b as f64, d as f64);
        }
    }

    #[test]
    fn snapping_error_is_tiny() {
        for v in [0.1f32, 0.3, 1.0 / 255.0, -0.77, 2.71] {
            assert!((snap(v) - v).abs() <= 2f32.powi(-21) * 1.01);
        }
    }
}
