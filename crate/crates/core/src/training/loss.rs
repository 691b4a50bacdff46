//! Class-weighted cross-entropy `L = λ_b·L_b + λ_l·L_l`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::ClassMask;
use crate::tensor::{Backward, BackwardCtx, Tape, Tensor, Var};

/// How each term's negative log-likelihood sum is normalised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNormalization {
    /// `L_b` averages over background pixels, `L_l` over lane pixels.
    #[default]
    PerTerm,
    /// Both terms are sums divided by the total pixel count.
    TotalPixels,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub background: f64,
    pub lane: f64,
    pub normalization: LossNormalization,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            background: 0.4,
            lane: 1.0,
            normalization: LossNormalization::PerTerm,
        }
    }
}

struct CrossEntropyOp {
    logits: Var,
    /// `ŷ − onehot` premultiplied by each pixel's weight.
    grad: Vec<f64>,
}

impl Backward for CrossEntropyOp {
    fn name(&self) -> &'static str {
        "weighted_cross_entropy"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.logits]
    }

    fn backward(&self, _ctx: &BackwardCtx<'_>, grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(self.grad.iter().map(|g| g * grad_out[0]).collect())]
    }
}

/// Returns `(loss, d loss / d logits)` without touching a tape.
fn cross_entropy(
    logits: &Tensor,
    target: &ClassMask,
    weights: &LossWeights,
) -> Result<(f64, Vec<f64>)> {
    let (n, h, w) = logits.chw()?;
    if (target.width(), target.height()) != (w, h) {
        return Err(Error::Dimension(format!(
            "logits {h}×{w} vs target {}×{}",
            target.height(),
            target.width()
        )));
    }
    let plane = h * w;
    if let Some(i) = target.data().iter().position(|&t| t as usize >= n) {
        return Err(Error::Data(format!(
            "target class {} at pixel {i} outside 0..{n}",
            target.data()[i]
        )));
    }
    let n_lane = target.data().iter().filter(|&&t| t > 0).count();
    let n_bg = plane - n_lane;
    let (wb, wl) = match weights.normalization {
        LossNormalization::PerTerm => (
            if n_bg == 0 {
                0.0
            } else {
                weights.background / n_bg as f64
            },
            if n_lane == 0 {
                0.0
            } else {
                weights.lane / n_lane as f64
            },
        ),
        LossNormalization::TotalPixels => (
            weights.background / plane as f64,
            weights.lane / plane as f64,
        ),
    };
    let z = logits.data();
    let mut grad = vec![0.0; z.len()];
    let mut loss = 0.0;
    for i in 0..plane {
        let t = target.data()[i] as usize;
        let wpx = if t == 0 { wb } else { wl };
        let max = (0..n)
            .map(|c| z[c * plane + i])
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..n).map(|c| (z[c * plane + i] - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += wpx * (log_sum - z[t * plane + i]);
        if wpx == 0.0 {
            continue;
        }
        for c in 0..n {
            let p = (z[c * plane + i] - log_sum).exp();
            grad[c * plane + i] = wpx * (p - f64::from(u8::from(c == t)));
        }
    }
    Ok((loss, grad))
}

/// Differentiable class-weighted cross-entropy on `n_classes×H×W` logits.
pub fn weighted_cross_entropy(
    tape: &mut Tape,
    logits: Var,
    target: &ClassMask,
    weights: &LossWeights,
) -> Result<Var> {
    let (loss, grad) = cross_entropy(tape.value(logits), target, weights)?;
    tape.record(
        Tensor::scalar(loss),
        Box::new(CrossEntropyOp { logits, grad }),
    )
}

/// Loss value only.
pub fn weighted_cross_entropy_value(
    logits: &Tensor,
    target: &ClassMask,
    weights: &LossWeights,
) -> Result<f64> {
    cross_entropy(logits, target, weights).map(|(l, _)| l)
}
