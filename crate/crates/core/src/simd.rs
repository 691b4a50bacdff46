//! Runtime ISA dispatch for the hot loops.
//!
//! [`multiversion!`] compiles one body three times (AVX-512F, AVX2, baseline)
//! and picks the widest the CPU supports. Multiply-adds are written as
//! explicit `mul_add`, which is a single rounding on every target (hardware
//! FMA where enabled, libm otherwise), so all variants produce bitwise
//! identical results.

macro_rules! multiversion {
    ($(#[$m:meta])* $vis:vis fn $name:ident($($arg:ident: $ty:ty),* $(,)?) $(-> $ret:ty)? $body:block) => {
        $(#[$m])*
        #[allow(clippy::too_many_arguments)]
        $vis fn $name($($arg: $ty),*) $(-> $ret)? {
            #[inline(always)]
            #[allow(clippy::too_many_arguments)]
            fn imp($($arg: $ty),*) $(-> $ret)? $body
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx512f,fma")]
                #[allow(clippy::too_many_arguments)]
                unsafe fn avx512($($arg: $ty),*) $(-> $ret)? { imp($($arg),*) }
                #[target_feature(enable = "avx2,fma")]
                #[allow(clippy::too_many_arguments)]
                unsafe fn avx2($($arg: $ty),*) $(-> $ret)? { imp($($arg),*) }
                if std::arch::is_x86_feature_detected!("avx512f") && std::arch::is_x86_feature_detected!("fma") {
                    // SAFETY: the feature was detected at runtime.
                    return unsafe { avx512($($arg),*) };
                }
                if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
                    // SAFETY: as above.
                    return unsafe { avx2($($arg),*) };
                }
            }
            imp($($arg),*)
        }
    };
}

/// `y += a · x` elementwise.
#[inline(always)]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in y.iter_mut().zip(x) {
        *o = a.mul_add(*v, *o);
    }
}

/// `MR×NR` register tile over one packed depth panel (`panel[q*NR + t]`
/// holds `b[p0 + q][j0 + t]`).
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn tile_nn<const MR: usize, const NR: usize>(
    n: usize,
    k: usize,
    a: &[f64],
    panel: &[f64],
    c: &mut [f64],
    i0: usize,
    j0: usize,
    p0: usize,
) {
    let depth = panel.len() / NR;
    let mut acc = [[0.0f64; NR]; MR];
    let rows: [&[f64]; MR] =
        std::array::from_fn(|r| &a[(i0 + r) * k + p0..(i0 + r) * k + p0 + depth]);
    for (r, acc_r) in acc.iter_mut().enumerate() {
        acc_r.copy_from_slice(&c[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR]);
    }
    for (q, brow) in panel.chunks_exact(NR).enumerate() {
        for r in 0..MR {
            let av = rows[r][q];
            for t in 0..NR {
                acc[r][t] = av.mul_add(brow[t], acc[r][t]);
            }
        }
    }
    for (r, acc_r) in acc.iter().enumerate() {
        c[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR].copy_from_slice(acc_r);
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn column_block<const NR: usize>(
    m: usize,
    n: usize,
    k: usize,
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    j0: usize,
    ps: std::ops::Range<usize>,
    buf: &mut [f64],
) {
    let p0 = ps.start;
    let panel = &mut buf[..ps.len() * NR];
    for (q, dst) in panel.chunks_exact_mut(NR).enumerate() {
        let p = p0 + q;
        dst.copy_from_slice(&b[p * n + j0..p * n + j0 + NR]);
    }
    let panel = &*panel;
    let mut i0 = 0;
    while i0 + 4 <= m {
        tile_nn::<4, NR>(n, k, a, panel, c, i0, j0, p0);
        i0 += 4;
    }
    while i0 < m {
        tile_nn::<1, NR>(n, k, a, panel, c, i0, j0, p0);
        i0 += 1;
    }
}

multiversion! {
    /// `c[m×n] += a[m×k] · b[k×n]`, all row-major. Every element sums over
    /// `k` in order, whatever the tiling.
    pub(crate) fn gemm_nn(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        let mut buf = vec![0.0f64; k.min(KC) * 16];
        let mut p0 = 0;
        while p0 < k {
            let p1 = (p0 + KC).min(k);
            gemm_panel(m, n, k, a, b, c, p0..p1, &mut buf);
            p0 = p1;
        }
    }
}

/// Depth of one packed panel of `b`.
const KC: usize = 256;

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn gemm_panel(
    m: usize,
    n: usize,
    k: usize,
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    ps: std::ops::Range<usize>,
    buf: &mut [f64],
) {
    let mut j0 = 0;
    while j0 + 16 <= n {
        column_block::<16>(m, n, k, a, b, c, j0, ps.clone(), buf);
        j0 += 16;
    }
    if j0 + 8 <= n {
        column_block::<8>(m, n, k, a, b, c, j0, ps.clone(), buf);
        j0 += 8;
    }
    if j0 + 4 <= n {
        column_block::<4>(m, n, k, a, b, c, j0, ps.clone(), buf);
        j0 += 4;
    }
    while j0 < n {
        column_block::<1>(m, n, k, a, b, c, j0, ps.clone(), buf);
        j0 += 1;
    }
}

/// Row-major transpose of an `m×n` matrix.
pub(crate) fn transpose(m: usize, n: usize, a: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; m * n];
    for i in 0..m {
        for (j, &v) in a[i * n..(i + 1) * n].iter().enumerate() {
            t[j * m + i] = v;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_bitwise() {
        let mut rng = crate::rng::Rng::new(5);
        for (m, n, k) in [(1, 1, 1), (4, 16, 3), (7, 37, 11), (9, 32, 20), (5, 29, 4)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.range(-1.0, 1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.range(-1.0, 1.0)).collect();
            let init: Vec<f64> = (0..m * n).map(|_| rng.range(-1.0, 1.0)).collect();
            let mut c = init.clone();
            gemm_nn(m, n, k, &a, &b, &mut c);
            let bt = transpose(k, n, &b);
            assert_eq!(transpose(n, k, &bt), b);
            for i in 0..m {
                for j in 0..n {
                    let mut want = init[i * n + j];
                    let mut unfused = want;
                    for p in 0..k {
                        want = a[i * k + p].mul_add(b[p * n + j], want);
                        unfused += a[i * k + p] * b[p * n + j];
                    }
                    assert_eq!(c[i * n + j].to_bits(), want.to_bits());
                    assert!((c[i * n + j] - unfused).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn axpy_is_fused() {
        let x = [0.1, 0.2, 0.3];
        let mut y = [1.0, 2.0, 3.0];
        axpy(&mut y, 3.0, &x);
        for k in 0..3 {
            assert_eq!(
                y[k].to_bits(),
                3.0f64.mul_add(x[k], [1.0, 2.0, 3.0][k]).to_bits()
            );
        }
    }
}
