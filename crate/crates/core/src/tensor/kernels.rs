//! Raw forward/backward kernels over flat row-major buffers.
//!
//! These are exposed so benches can drive them with an explicit [`Exec`];
//! the tape calls them with `Exec::default()`.

use crate::par::Exec;
use crate::simd::{axpy, gemm_nn, transpose};

/// Zero padding per side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Padding {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }
}

/// Geometry of one 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: Padding,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    /// Returns `None` when the output extent is not integral or not positive.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: Padding,
    ) -> Option<Self> {
        let span_h = (h + pad.top + pad.bottom).checked_sub(kh)?;
        let span_w = (w + pad.left + pad.right).checked_sub(kw)?;
        if stride == 0 || span_h % stride != 0 || span_w % stride != 0 {
            return None;
        }
        Some(ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            h_out: span_h / stride + 1,
            w_out: span_w / stride + 1,
        })
    }

    /// Output columns `[lo, hi)` whose tap `j` lands inside the input.
    #[inline]
    fn ow_range(&self, j: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = j as isize - self.pad.left as isize;
        // iw = ow * s + off must satisfy 0 <= iw < w
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = (self.w as isize - 1 - off).div_euclid(s) + 1;
        let hi = hi.clamp(0, self.w_out as isize);
        (lo.min(hi) as usize, hi as usize)
    }

    #[inline]
    fn input_row(&self, oh: usize, i: usize) -> Option<usize> {
        let ih = (oh * self.stride + i) as isize - self.pad.top as isize;
        (ih >= 0 && (ih as usize) < self.h).then_some(ih as usize)
    }
}

/// Row-blocked `c += a · b` over the executor.
pub(crate) fn par_gemm_nn(
    exec: Exec,
    m: usize,
    n: usize,
    k: usize,
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    // multiple of the 4-row register tile, a couple of chunks per thread
    let rows = m.div_ceil(2 * exec.threads()).next_multiple_of(4);
    exec.for_each_chunk(c, rows * n, |idx, cc| {
        let r0 = idx * rows;
        let mr = cc.len() / n;
        gemm_nn(mr, n, k, &a[r0 * k..(r0 + mr) * k], b, cc)
    });
}

/// Patch matrix: row `(ci, i, j)` holds tap `(i, j)` of channel `ci` for
/// every output position; out-of-bounds taps are zero.
fn im2col(exec: Exec, g: &ConvGeom, input: &[f64]) -> Vec<f64> {
    let plane = g.h_out * g.w_out;
    let taps = g.kh * g.kw;
    let mut col = vec![0.0; g.c_in * taps * plane];
    exec.for_each_chunk(&mut col, taps * plane, |ci, col_c| {
        let x_c = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut col_c[(i * g.kw + j) * plane..(i * g.kw + j + 1) * plane];
                let (lo, hi) = g.ow_range(j);
                if lo >= hi {
                    continue;
                }
                let base = lo * g.stride + j - g.pad.left;
                for oh in 0..g.h_out {
                    let Some(ih) = g.input_row(oh, i) else {
                        continue;
                    };
                    let x_row = &x_c[ih * g.w..(ih + 1) * g.w];
                    let dst = &mut row[oh * g.w_out + lo..oh * g.w_out + hi];
                    if g.stride == 1 {
                        dst.copy_from_slice(&x_row[base..base + hi - lo]);
                    } else {
                        for (k, d) in dst.iter_mut().enumerate() {
                            *d = x_row[base + k * g.stride];
                        }
                    }
                }
            }
        }
    });
    col
}

/// Adjoint of [`im2col`]: scatter-adds patch rows back onto the input grid.
fn col2im(exec: Exec, g: &ConvGeom, col: &[f64]) -> Vec<f64> {
    let plane = g.h_out * g.w_out;
    let taps = g.kh * g.kw;
    let mut dx = vec![0.0; g.c_in * g.h * g.w];
    exec.for_each_chunk(&mut dx, g.h * g.w, |ci, dx_c| {
        let col_c = &col[ci * taps * plane..(ci + 1) * taps * plane];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &col_c[(i * g.kw + j) * plane..(i * g.kw + j + 1) * plane];
                let (lo, hi) = g.ow_range(j);
                if lo >= hi {
                    continue;
                }
                let base = lo * g.stride + j - g.pad.left;
                for oh in 0..g.h_out {
                    let Some(ih) = g.input_row(oh, i) else {
                        continue;
                    };
                    let dx_row = &mut dx_c[ih * g.w..(ih + 1) * g.w];
                    let src = &row[oh * g.w_out + lo..oh * g.w_out + hi];
                    if g.stride == 1 {
                        axpy(&mut dx_row[base..], 1.0, src);
                    } else {
                        for (k, v) in src.iter().enumerate() {
                            dx_row[base + k * g.stride] += v;
                        }
                    }
                }
            }
        }
    });
    dx
}

pub fn conv2d_forward(
    exec: Exec,
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let plane = g.h_out * g.w_out;
    let r = g.c_in * g.kh * g.kw;
    let col = im2col(exec, g, input);
    let mut out = vec![0.0; g.c_out * plane];
    if let Some(b) = bias {
        for (o, &bv) in out.chunks_mut(plane).zip(b) {
            o.fill(bv);
        }
    }
    par_gemm_nn(exec, g.c_out, plane, r, weight, &col, &mut out);
    out
}

/// Gradient w.r.t. the input.
pub fn conv2d_backward_input(exec: Exec, g: &ConvGeom, weight: &[f64], dout: &[f64]) -> Vec<f64> {
    let plane = g.h_out * g.w_out;
    let r = g.c_in * g.kh * g.kw;
    let wt = transpose(g.c_out, r, weight);
    let mut col = vec![0.0; r * plane];
    par_gemm_nn(exec, r, plane, g.c_out, &wt, dout, &mut col);
    col2im(exec, g, &col)
}

/// Gradients w.r.t. weight and bias.
pub fn conv2d_backward_params(
    exec: Exec,
    g: &ConvGeom,
    input: &[f64],
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let plane = g.h_out * g.w_out;
    let r = g.c_in * g.kh * g.kw;
    // dWᵀ = col · doutᵀ; transposing dout is cheaper than transposing col
    let col = im2col(exec, g, input);
    let dout_t = transpose(g.c_out, plane, dout);
    let mut dw_t = vec![0.0; r * g.c_out];
    par_gemm_nn(exec, r, g.c_out, plane, &col, &dout_t, &mut dw_t);
    let dw = transpose(r, g.c_out, &dw_t);
    let db = (0..g.c_out)
        .map(|co| dout[co * plane..(co + 1) * plane].iter().sum())
        .collect();
    (dw, db)
}

/// Per-axis interpolation taps for half-pixel (align-corners = false) bilinear
/// resampling: `(i0, i1, w0, w1)` per output index.
pub fn bilinear_taps(n_in: usize, factor: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..n_in * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let l1 = src - i0 as f64;
            let l1 = if i1 == i0 { 0.0 } else { l1 };
            (i0, i1, 1.0 - l1, l1)
        })
        .collect()
}

pub fn upsample_forward(
    exec: Exec,
    c: usize,
    h: usize,
    w: usize,
    factor: usize,
    x: &[f64],
) -> Vec<f64> {
    let (ho, wo) = (h * factor, w * factor);
    let ty = bilinear_taps(h, factor);
    let tx = bilinear_taps(w, factor);
    let mut out = vec![0.0; c * ho * wo];
    exec.for_each_chunk(&mut out, ho * wo, |ci, o_c| {
        let x_c = &x[ci * h * w..(ci + 1) * h * w];
        for (oy, &(y0, y1, a0, a1)) in ty.iter().enumerate() {
            let r0 = &x_c[y0 * w..(y0 + 1) * w];
            let r1 = &x_c[y1 * w..(y1 + 1) * w];
            let o_row = &mut o_c[oy * wo..(oy + 1) * wo];
            for (o, &(x0, x1, b0, b1)) in o_row.iter_mut().zip(&tx) {
                *o = a0 * (b0 * r0[x0] + b1 * r0[x1]) + a1 * (b0 * r1[x0] + b1 * r1[x1]);
            }
        }
    });
    out
}

pub fn upsample_backward(
    exec: Exec,
    c: usize,
    h: usize,
    w: usize,
    factor: usize,
    dout: &[f64],
) -> Vec<f64> {
    let (ho, wo) = (h * factor, w * factor);
    let ty = bilinear_taps(h, factor);
    let tx = bilinear_taps(w, factor);
    let mut dx = vec![0.0; c * h * w];
    exec.for_each_chunk(&mut dx, h * w, |ci, d_c| {
        let g_c = &dout[ci * ho * wo..(ci + 1) * ho * wo];
        for (oy, &(y0, y1, a0, a1)) in ty.iter().enumerate() {
            let g_row = &g_c[oy * wo..(oy + 1) * wo];
            for (g, &(x0, x1, b0, b1)) in g_row.iter().zip(&tx) {
                d_c[y0 * w + x0] += a0 * b0 * g;
                d_c[y0 * w + x1] += a0 * b1 * g;
                d_c[y1 * w + x0] += a1 * b0 * g;
                d_c[y1 * w + x1] += a1 * b1 * g;
            }
        }
    });
    dx
}
