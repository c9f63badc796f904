//! Forward and backward kernels for the NCHW operations.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Range of output columns whose input column `ox*stride + kj - padding`
    /// lands inside `[0, w)`.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kj as isize - self.padding as isize;
        // smallest ox with ox*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest ox with ox*s + off <= w - 1
        let hi_num = self.w as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = lo.max(0) as usize;
        let hi = (hi + 1).clamp(0, self.wo as isize) as usize;
        (lo.min(hi), hi)
    }
}

/// Unfolds one image (`c x h x w`) into a `(c*k*k) x (ho*wo)` matrix.
fn im2col<T: Scalar>(g: &ConvGeom, img: &[T], cols: &mut [T]) {
    let p = g.positions();
    for ch in 0..g.c {
        let plane = &img[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ch * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.ho {
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let start = (lo + kj) - g.padding;
                        line[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            line[ox] = src[ox * g.stride + kj - g.padding];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into an image.
fn col2im_add<T: Scalar>(g: &ConvGeom, cols: &[T], img: &mut [T]) {
    let p = g.positions();
    for ch in 0..g.c {
        let plane = &mut img[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ch * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &src[oy * g.wo..(oy + 1) * g.wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in lo..hi {
                        dst[ox * g.stride + kj - g.padding] += line[ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(g: &ConvGeom, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let rows = g.rows();
    let p = g.positions();
    let mut cols = vec![T::zero(); rows * p];
    let mut out = vec![T::zero(); g.n * g.o * p];
    for b in 0..g.n {
        im2col(g, &input[b * g.c * g.h * g.w..(b + 1) * g.c * g.h * g.w], &mut cols);
        let dst = &mut out[b * g.o * p..(b + 1) * g.o * p];
        for (o, chunk) in dst.chunks_mut(p).enumerate() {
            chunk.fill(bias[o]);
        }
        T::gemm(
            g.o, rows, p, T::one(), weight, rows as isize, 1, &cols, p as isize, 1, T::one(), dst,
            p as isize, 1,
        );
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (need_in, need_w, need_b) = need;
    let rows = g.rows();
    let p = g.positions();
    let img_len = g.c * g.h * g.w;
    let mut gin = need_in.then(|| vec![T::zero(); g.n * img_len]);
    let mut gw = need_w.then(|| vec![T::zero(); g.o * rows]);
    let mut gb = need_b.then(|| vec![T::zero(); g.o]);
    let mut cols = vec![T::zero(); rows * p];
    for b in 0..g.n {
        let go = &grad_out[b * g.o * p..(b + 1) * g.o * p];
        if let Some(gb) = gb.as_mut() {
            for (o, chunk) in go.chunks(p).enumerate() {
                gb[o] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(gw) = gw.as_mut() {
            im2col(g, &input[b * img_len..(b + 1) * img_len], &mut cols);
            // gW += gout (o x p) * cols^T (p x rows)
            T::gemm(
                g.o, p, rows, T::one(), go, p as isize, 1, &cols, 1, p as isize, T::one(), gw,
                rows as isize, 1,
            );
        }
        if let Some(gin) = gin.as_mut() {
            // gcols = W^T (rows x o) * gout (o x p)
            T::gemm(
                rows, g.o, p, T::one(), weight, 1, rows as isize, go, p as isize, 1, T::zero(),
                &mut cols, p as isize, 1,
            );
            col2im_add(g, &cols, &mut gin[b * img_len..(b + 1) * img_len]);
        }
    }
    ConvGrads {
        input: gin,
        weight: gw,
        bias: gb,
    }
}

/// 2x2 non-overlapping max; returns values and flat argmax indices into the
/// input. Ties resolve to the first element in row-major window order.
pub(crate) fn maxpool2_forward<T: Scalar>(
    dims: (usize, usize, usize, usize),
    x: &[T],
) -> (Vec<T>, Vec<usize>) {
    let (n, c, h, w) = dims;
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub(crate) fn upsample2_forward<T: Scalar>(dims: (usize, usize, usize, usize), x: &[T]) -> Vec<T> {
    let (n, c, h, w) = dims;
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); n * c * ho * wo];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
        for oy in 0..ho {
            let row = &src[(oy / 2) * w..(oy / 2 + 1) * w];
            for (ox, v) in dst[oy * wo..(oy + 1) * wo].iter_mut().enumerate() {
                *v = row[ox / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Scalar>(dims: (usize, usize, usize, usize), g: &[T]) -> Vec<T> {
    let (n, c, h, w) = dims;
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let src = &g[plane * ho * wo..(plane + 1) * ho * wo];
        let dst = &mut out[plane * h * w..(plane + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                dst[(oy / 2) * w + ox / 2] += src[oy * wo + ox];
            }
        }
    }
    out
}
