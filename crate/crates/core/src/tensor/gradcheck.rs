use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)` over checked coordinates.
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped because f is not differentiable there.
    pub excluded: Vec<usize>,
}

/// One-sided slopes that disagree by more than this (relative plus absolute)
/// mark a kink.
const KINK_REL: f64 = 0.1;
const KINK_ABS: f64 = 1e-4;
/// Relative tolerance of the half-step probes that catch kinks deep inside
/// a composite `f`, where the slope change is small.
const KINK_FINE: f64 = 1e-7;

fn eval<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.constant(x.clone())?;
    let out = f(&mut tape, v)?;
    let val = tape.value(out);
    if !val.is_scalar() {
        return Err(Error::Contract(format!(
            "grad_check: f returned shape {:?}",
            val.shape()
        )));
    }
    let s = val.data()[0];
    if !s.is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    Ok(s)
}

/// Compares the tape gradient of scalar `f` at `x` with central differences.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config(format!(
            "grad_check eps must be positive, got {eps}"
        )));
    }
    let analytic = {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone().with_grad())?;
        let out = f(&mut tape, v)?;
        let grads = tape.backward(out)?;
        grads
            .get(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; x.len()])
    };
    let f0 = eval(&f, x)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        excluded: vec![],
    };
    let mut probe = x.clone();
    let mut at = |i: usize, h: f64| -> Result<f64> {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let v = eval(&f, &probe);
        probe.data_mut()[i] = orig;
        v
    };
    for (i, &a) in analytic.iter().enumerate() {
        let (fp, fm) = (at(i, eps)?, at(i, -eps)?);
        let (up, down) = ((fp - f0) / eps, (f0 - fm) / eps);
        if (up - down).abs() > KINK_REL * up.abs().max(down.abs()) + KINK_ABS {
            report.excluded.push(i);
            continue;
        }
        let h = eps / 2.0;
        let (hp, hm) = (at(i, h)?, at(i, -h)?);
        let numeric = (fp - fm) / (2.0 * eps);
        let half = (hp - hm) / (2.0 * h);
        // smooth f: the one-sided gap halves with the step and the central
        // estimates agree to O(eps^2)
        let curvature = ((hp - f0) / h - (f0 - hm) / h) - (up - down) / 2.0;
        let scale = [f0, fp, fm, hp, hm]
            .iter()
            .fold(1.0f64, |m, v| m.max(v.abs()));
        let tol = KINK_FINE * numeric.abs().max(half.abs()) + 64.0 * f64::EPSILON * scale / h;
        if (numeric - half).abs() > tol || curvature.abs() > tol {
            report.excluded.push(i);
            continue;
        }
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}
