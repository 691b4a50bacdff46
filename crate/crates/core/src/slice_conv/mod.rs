//! Directional slice convolution and the multidirectional (MSC) module.
//!
//! A `C×H×W` map is cut into one-pixel slices along an axis and updated in
//! the direction's iteration order:
//!
//! ```text
//! X'_1 = X_1
//! X'_i = X_i ⊕ relu(X'_{i-1} ⊗ K)      1 < i ≤ N
//! ```
//!
//! `⊗` is a same-padded 1-D convolution inside the slice mixing all `C`
//! channels, and `⊕` is a plain sum for the vertical/horizontal directions
//! or a sum after a one-pixel shift (dropping the overflow, zero-filling the
//! vacated end) for the diagonal ones.

mod reference;

pub use reference::slice_conv_reference;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simd::{axpy, gemm_nn, transpose};
use crate::tensor::{Backward, BackwardCtx};
use crate::tensor::{Tape, Tensor, Var};

/// Which axis a direction slices along.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// `H` slices of shape `C×1×W`; the kernel runs along `W`.
    Vertical,
    /// `W` slices of shape `C×H×1`; the kernel runs along `H`.
    Horizontal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Direction {
    /// V↓
    TopDown,
    /// V↑
    BottomUp,
    /// H→
    LeftRight,
    /// H←
    RightLeft,
    /// MD↘, upper-left to lower-right
    MainDown,
    /// MD↖, lower-right to upper-left
    MainUp,
    /// CD↙, upper-right to lower-left
    CounterDown,
    /// CD↗, lower-left to upper-right
    CounterUp,
}

impl Direction {
    /// Canonical serial order inside MSC.
    pub const ALL: [Direction; 8] = [
        Direction::TopDown,
        Direction::BottomUp,
        Direction::LeftRight,
        Direction::RightLeft,
        Direction::MainDown,
        Direction::MainUp,
        Direction::CounterDown,
        Direction::CounterUp,
    ];

    pub const VERTICAL_HORIZONTAL: [Direction; 4] = [
        Direction::TopDown,
        Direction::BottomUp,
        Direction::LeftRight,
        Direction::RightLeft,
    ];

    pub const DIAGONAL: [Direction; 4] = [
        Direction::MainDown,
        Direction::MainUp,
        Direction::CounterDown,
        Direction::CounterUp,
    ];

    pub fn family(self) -> Family {
        use Direction::*;
        match self {
            TopDown | BottomUp | MainDown | MainUp => Family::Vertical,
            LeftRight | RightLeft | CounterDown | CounterUp => Family::Horizontal,
        }
    }

    /// True when iteration starts at the last slice (bottom row / right column).
    pub fn starts_at_end(self) -> bool {
        use Direction::*;
        matches!(self, BottomUp | RightLeft | MainUp | CounterDown)
    }

    /// Offset applied to the message along the within-slice axis.
    pub fn shift(self) -> isize {
        use Direction::*;
        match self {
            TopDown | BottomUp | LeftRight | RightLeft => 0,
            MainDown | CounterDown => 1,
            MainUp | CounterUp => -1,
        }
    }

    /// Short name used on the command line and in parameter names.
    pub fn code(self) -> &'static str {
        use Direction::*;
        match self {
            TopDown => "vd",
            BottomUp => "vu",
            LeftRight => "hl",
            RightLeft => "hr",
            MainDown => "mdd",
            MainUp => "mdu",
            CounterDown => "cdd",
            CounterUp => "cdu",
        }
    }

    pub fn param_name(self) -> String {
        format!("msc.{}.weight", self.code())
    }

    pub fn index(self) -> usize {
        Direction::ALL
            .iter()
            .position(|&d| d == self)
            .expect("listed")
    }

    /// Parses a comma list such as `vd,vu,mdd`. An empty string is the empty set.
    pub fn parse_list(s: &str) -> Result<Vec<Direction>> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Direction::ALL
            .into_iter()
            .find(|d| d.code() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown direction {s:?} (expected vd,vu,hl,hr,mdd,mdu,cdd,cdu)"
                ))
            })
    }
}

impl From<Direction> for String {
    fn from(d: Direction) -> String {
        d.code().to_string()
    }
}

impl TryFrom<String> for Direction {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Shared `C×C×k` weights of one directional operation. No bias.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceKernel {
    family: Family,
    weights: Tensor,
}

impl SliceKernel {
    pub fn new(family: Family, weights: Tensor) -> Result<Self> {
        kernel_dims(&weights)?;
        Ok(SliceKernel { family, weights })
    }

    pub fn zeros(family: Family, channels: usize, k: usize) -> Result<Self> {
        Self::new(family, Tensor::zeros(&[channels, channels, k]))
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn extent(&self) -> usize {
        self.weights.shape()[2]
    }
}

/// `(C, k)` of a slice kernel tensor.
pub(crate) fn kernel_dims(w: &Tensor) -> Result<(usize, usize)> {
    match w.shape()[..] {
        [co, ci, k] if co == ci => {
            if k % 2 == 0 {
                Err(Error::Config(format!(
                    "slice kernel extent {k} must be odd"
                )))
            } else {
                Ok((co, k))
            }
        }
        _ => Err(Error::Dimension(format!(
            "slice kernel must be C×C×k, got {:?}",
            w.shape()
        ))),
    }
}

/// Eight independent kernels, one per direction, with a common extent.
#[derive(Clone, Debug, PartialEq)]
pub struct MscParams {
    kernels: Vec<SliceKernel>,
}

impl MscParams {
    /// `kernels[i]` belongs to `Direction::ALL[i]`.
    pub fn new(kernels: Vec<SliceKernel>) -> Result<Self> {
        if kernels.len() != 8 {
            return Err(Error::Config(format!(
                "MSC needs 8 kernels, got {}",
                kernels.len()
            )));
        }
        let k = kernels[0].extent();
        for (d, kern) in Direction::ALL.iter().zip(&kernels) {
            if kern.family() != d.family() {
                return Err(Error::Config(format!(
                    "kernel for {d} has the wrong family"
                )));
            }
            if kern.extent() != k {
                return Err(Error::Config("MSC kernels must share one extent".into()));
            }
        }
        Ok(MscParams { kernels })
    }

    pub fn zeros(channels: usize, k: usize) -> Result<Self> {
        Self::new(
            Direction::ALL
                .iter()
                .map(|d| SliceKernel::zeros(d.family(), channels, k))
                .collect::<Result<_>>()?,
        )
    }

    pub fn kernel(&self, d: Direction) -> &SliceKernel {
        &self.kernels[d.index()]
    }
}

/// In-slice message offset. `+1` drops the last element and zero-fills the
/// first; `-1` drops the first and zero-fills the last; `0` is the identity.
pub fn shift_message(msg: &[f64], slice_len: usize, shift: isize) -> Vec<f64> {
    let mut out = vec![0.0; msg.len()];
    for (o, m) in out.chunks_mut(slice_len).zip(msg.chunks(slice_len)) {
        match shift {
            0 => o.copy_from_slice(m),
            1 => o[1..].copy_from_slice(&m[..slice_len - 1]),
            -1 => o[..slice_len - 1].copy_from_slice(&m[1..]),
            _ => unreachable!("shift is one pixel"),
        }
    }
    out
}

/// Slice-major copy: `out[n][c][l]`.
fn to_slices(x: &[f64], c: usize, h: usize, w: usize, family: Family) -> Vec<f64> {
    match family {
        Family::Vertical => {
            let mut out = vec![0.0; x.len()];
            for ci in 0..c {
                for hi in 0..h {
                    let src = (ci * h + hi) * w;
                    let dst = (hi * c + ci) * w;
                    out[dst..dst + w].copy_from_slice(&x[src..src + w]);
                }
            }
            out
        }
        Family::Horizontal => {
            let mut out = vec![0.0; x.len()];
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        out[(wi * c + ci) * h + hi] = x[(ci * h + hi) * w + wi];
                    }
                }
            }
            out
        }
    }
}

fn from_slices(s: &[f64], c: usize, h: usize, w: usize, family: Family) -> Vec<f64> {
    let mut out = vec![0.0; s.len()];
    match family {
        Family::Vertical => {
            for hi in 0..h {
                for ci in 0..c {
                    let src = (hi * c + ci) * w;
                    let dst = (ci * h + hi) * w;
                    out[dst..dst + w].copy_from_slice(&s[src..src + w]);
                }
            }
        }
        Family::Horizontal => {
            for wi in 0..w {
                for ci in 0..c {
                    for hi in 0..h {
                        out[(ci * h + hi) * w + wi] = s[(wi * c + ci) * h + hi];
                    }
                }
            }
        }
    }
    out
}

/// Slicing geometry of one directional pass.
#[derive(Clone, Copy, Debug)]
struct Plan {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    dir: Direction,
}

impl Plan {
    fn new(x: &Tensor, weights: &Tensor, dir: Direction) -> Result<Self> {
        let (c, h, w) = x.chw()?;
        let (kc, k) = kernel_dims(weights)?;
        if kc != c {
            return Err(Error::Dimension(format!(
                "slice kernel has {kc} channels, input has {c}"
            )));
        }
        let plan = Plan { c, h, w, k, dir };
        if k > plan.slice_len() {
            log::warn!(
                "slice kernel extent {k} exceeds slice length {} for {dir}; padding covers it",
                plan.slice_len()
            );
        }
        Ok(plan)
    }

    fn slices(&self) -> usize {
        match self.dir.family() {
            Family::Vertical => self.h,
            Family::Horizontal => self.w,
        }
    }

    fn slice_len(&self) -> usize {
        match self.dir.family() {
            Family::Vertical => self.w,
            Family::Horizontal => self.h,
        }
    }

    /// Slice indices in iteration order.
    fn order(&self) -> Vec<usize> {
        let n = self.slices();
        if self.dir.starts_at_end() {
            (0..n).rev().collect()
        } else {
            (0..n).collect()
        }
    }
}

/// `col[(ci, j)][l] = y[ci][l + j − pad]`, zero outside the slice.
fn slice_im2col(y: &[f64], c: usize, len: usize, k: usize, col: &mut [f64]) {
    let pad = (k - 1) / 2;
    for ci in 0..c {
        let yc = &y[ci * len..(ci + 1) * len];
        for j in 0..k {
            let row = &mut col[(ci * k + j) * len..(ci * k + j + 1) * len];
            // l + j - pad in [0, len)
            let lo = pad.saturating_sub(j).min(len);
            let hi = (len + pad).saturating_sub(j).min(len).max(lo);
            if lo >= hi {
                row.fill(0.0);
                continue;
            }
            row[..lo].fill(0.0);
            row[hi..].fill(0.0);
            row[lo..hi].copy_from_slice(&yc[lo + j - pad..hi + j - pad]);
        }
    }
}

/// Transposed patches: `col_t[l][(ci, j)] = y[ci][l + j − pad]`.
fn slice_im2col_t(y: &[f64], c: usize, len: usize, k: usize, col_t: &mut [f64]) {
    let pad = (k - 1) / 2;
    for (l, row) in col_t.chunks_exact_mut(c * k).enumerate() {
        // j + l - pad in [0, len)
        let lo = pad.saturating_sub(l).min(k);
        let hi = (len + pad).saturating_sub(l).min(k).max(lo);
        for ci in 0..c {
            let dst = &mut row[ci * k..(ci + 1) * k];
            dst[..lo].fill(0.0);
            dst[hi..].fill(0.0);
            if lo < hi {
                let src = ci * len + l + lo - pad;
                dst[lo..hi].copy_from_slice(&y[src..src + hi - lo]);
            }
        }
    }
}

/// Adjoint of [`slice_im2col`], added into `g`.
fn slice_col2im_add(col: &[f64], c: usize, len: usize, k: usize, g: &mut [f64]) {
    let pad = (k - 1) / 2;
    for ci in 0..c {
        let gc = &mut g[ci * len..(ci + 1) * len];
        for j in 0..k {
            let row = &col[(ci * k + j) * len..(ci * k + j + 1) * len];
            let lo = pad.saturating_sub(j).min(len);
            let hi = (len + pad).saturating_sub(j).min(len).max(lo);
            if lo >= hi {
                continue;
            }
            axpy(&mut gc[lo + j - pad..hi + j - pad], 1.0, &row[lo..hi]);
        }
    }
}

/// `out[co][l] = Σ_ci Σ_j K[co][ci][j] · y[ci][l + j − pad]`, zero outside the slice.
fn conv_in_slice(
    kernel: &[f64],
    y: &[f64],
    c: usize,
    len: usize,
    k: usize,
    col: &mut [f64],
    out: &mut [f64],
) {
    slice_im2col(y, c, len, k, col);
    out.fill(0.0);
    gemm_nn(c, len, c * k, kernel, col, out);
}

/// Runs the recurrence in slice-major layout, returning updated slices and
/// the pre-activation of every non-initial slice.
fn forward_slices(plan: &Plan, kernel: &[f64], slices: &mut [f64]) -> Vec<f64> {
    let (c, len, k) = (plan.c, plan.slice_len(), plan.k);
    let stride = c * len;
    let shift = plan.dir.shift();
    let mut pre = vec![0.0; slices.len()];
    let mut col = vec![0.0; c * k * len];
    let order = plan.order();
    for pair in order.windows(2) {
        let (prev, cur) = (pair[0], pair[1]);
        let (z, y_prev) = {
            let z = &mut pre[cur * stride..(cur + 1) * stride];
            (z, &slices[prev * stride..(prev + 1) * stride])
        };
        conv_in_slice(kernel, y_prev, c, len, k, &mut col, z);
        let y_cur = &mut slices[cur * stride..(cur + 1) * stride];
        for ch in 0..c {
            let zc = &z[ch * len..(ch + 1) * len];
            let yc = &mut y_cur[ch * len..(ch + 1) * len];
            add_shifted_relu(yc, zc, shift);
        }
    }
    pre
}

/// `y[l] += relu(z[l − shift])` inside one channel row.
#[inline]
fn add_shifted_relu(y: &mut [f64], z: &[f64], shift: isize) {
    let len = y.len();
    let relu = |v: f64| if v > 0.0 { v } else { 0.0 };
    match shift {
        0 => y.iter_mut().zip(z).for_each(|(a, &b)| *a += relu(b)),
        1 => y[1..]
            .iter_mut()
            .zip(&z[..len - 1])
            .for_each(|(a, &b)| *a += relu(b)),
        -1 => y[..len - 1]
            .iter_mut()
            .zip(&z[1..])
            .for_each(|(a, &b)| *a += relu(b)),
        _ => unreachable!(),
    }
}

/// Reverse sweep. `grad` arrives as the gradient w.r.t. the output slices and
/// leaves as the gradient w.r.t. the input slices.
fn backward_slices(
    plan: &Plan,
    kernel: &[f64],
    out_slices: &[f64],
    pre: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let (c, len, k) = (plan.c, plan.slice_len(), plan.k);
    let stride = c * len;
    let shift = plan.dir.shift();
    let ck = c * k;
    let order = plan.order();
    let steps = order.len().saturating_sub(1);
    // dK = Σ_s dZ_s · col_sᵀ, done as one deep product after the sweep
    let depth = steps * len;
    let mut dz_all = vec![0.0; c * depth];
    let mut col_t_all = vec![0.0; depth * ck];
    let mut dz = vec![0.0; stride];
    let mut dcol = vec![0.0; ck * len];
    let kt = transpose(c, ck, kernel);
    for (step, pair) in order.windows(2).enumerate().rev() {
        let (prev, cur) = (pair[0], pair[1]);
        let g_cur = &grad[cur * stride..(cur + 1) * stride];
        let z = &pre[cur * stride..(cur + 1) * stride];
        // dz[l] = g[l + shift] · [z[l] > 0]
        for ch in 0..c {
            let gz = &mut dz[ch * len..(ch + 1) * len];
            let gc = &g_cur[ch * len..(ch + 1) * len];
            let zc = &z[ch * len..(ch + 1) * len];
            gz.fill(0.0);
            match shift {
                0 => gz.copy_from_slice(gc),
                1 => gz[..len - 1].copy_from_slice(&gc[1..]),
                -1 => gz[1..].copy_from_slice(&gc[..len - 1]),
                _ => unreachable!(),
            }
            for (g, &zv) in gz.iter_mut().zip(zc) {
                if zv <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let y_prev = &out_slices[prev * stride..(prev + 1) * stride];
        let (head, tail) = grad.split_at_mut(prev.max(cur) * stride);
        let g_prev = if prev < cur {
            &mut head[prev * stride..(prev + 1) * stride]
        } else {
            &mut tail[..stride]
        };
        slice_im2col_t(
            y_prev,
            c,
            len,
            k,
            &mut col_t_all[step * len * ck..(step + 1) * len * ck],
        );
        for ch in 0..c {
            dz_all[ch * depth + step * len..ch * depth + (step + 1) * len]
                .copy_from_slice(&dz[ch * len..(ch + 1) * len]);
        }
        dcol.fill(0.0);
        gemm_nn(ck, len, c, &kt, &dz, &mut dcol);
        slice_col2im_add(&dcol, c, len, k, g_prev);
    }
    let mut dk = vec![0.0; c * ck];
    gemm_nn(c, ck, depth, &dz_all, &col_t_all, &mut dk);
    dk
}

fn slice_conv_raw(
    x: &Tensor,
    weights: &Tensor,
    dir: Direction,
) -> Result<(Tensor, Vec<f64>, Plan)> {
    let plan = Plan::new(x, weights, dir)?;
    let fam = dir.family();
    let mut slices = to_slices(x.data(), plan.c, plan.h, plan.w, fam);
    let pre = forward_slices(&plan, weights.data(), &mut slices);
    let out = from_slices(&slices, plan.c, plan.h, plan.w, fam);
    Ok((Tensor::from_parts(x.shape().to_vec(), out), pre, plan))
}

/// One directional slice convolution. Output shape equals input shape.
pub fn directional_slice_conv(x: &Tensor, kernel: &SliceKernel, dir: Direction) -> Result<Tensor> {
    if kernel.family() != dir.family() {
        return Err(Error::Config(format!(
            "{dir} needs a {:?} kernel, got {:?}",
            dir.family(),
            kernel.family()
        )));
    }
    slice_conv_raw(x, kernel.weights(), dir).map(|(t, _, _)| t)
}

/// All eight directions in series, in canonical order.
pub fn msc_forward(x: &Tensor, params: &MscParams) -> Result<Tensor> {
    msc_forward_ordered(x, params, &Direction::ALL)
}

/// The directions in `order`, in series.
pub fn msc_forward_ordered(x: &Tensor, params: &MscParams, order: &[Direction]) -> Result<Tensor> {
    let mut cur = x.clone();
    for &d in order {
        cur = directional_slice_conv(&cur, params.kernel(d), d)?;
    }
    Ok(cur)
}

struct SliceConvOp {
    input: Var,
    kernel: Var,
    plan: Plan,
    pre: Vec<f64>,
}

impl Backward for SliceConvOp {
    fn name(&self) -> &'static str {
        "slice_conv"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.input, self.kernel]
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let p = &self.plan;
        let fam = p.dir.family();
        let out_slices = to_slices(ctx.output().data(), p.c, p.h, p.w, fam);
        let mut g = to_slices(grad_out, p.c, p.h, p.w, fam);
        let dk = backward_slices(
            p,
            ctx.value(self.kernel).data(),
            &out_slices,
            &self.pre,
            &mut g,
        );
        let dx = ctx
            .needs_grad(self.input)
            .then(|| from_slices(&g, p.c, p.h, p.w, fam));
        vec![dx, ctx.needs_grad(self.kernel).then_some(dk)]
    }
}

/// Differentiable slice convolution on a tape; `kernel` is a `C×C×k` value
/// whose family is implied by `dir`.
pub fn slice_conv(tape: &mut Tape, x: Var, kernel: Var, dir: Direction) -> Result<Var> {
    let (out, pre, plan) = slice_conv_raw(tape.value(x), tape.value(kernel), dir)?;
    tape.record(
        out,
        Box::new(SliceConvOp {
            input: x,
            kernel,
            plan,
            pre,
        }),
    )
}

/// Differentiable MSC: each `(direction, kernel)` pair applied in sequence.
pub fn msc(tape: &mut Tape, x: Var, kernels: &[(Direction, Var)]) -> Result<Var> {
    kernels
        .iter()
        .try_fold(x, |cur, &(d, k)| slice_conv(tape, cur, k, d))
}
