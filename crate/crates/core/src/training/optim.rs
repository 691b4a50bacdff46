use crate::error::{Error, Result};
use crate::tensor::ParamStore;

/// Heavy-ball momentum state: one velocity per parameter, zero at start.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimState {
    velocity: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(params: &ParamStore) -> Self {
        OptimState {
            velocity: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn velocity(&self, index: usize) -> &[f64] {
        &self.velocity[index]
    }
}

/// `v ← μ·v + g`, `p ← p − lr·v` for every parameter. Every parameter must
/// carry a gradient.
pub fn sgd_momentum_step(
    params: &mut ParamStore,
    state: &mut OptimState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if state.velocity.len() != params.len() {
        return Err(Error::Contract(
            "optimizer state does not match parameters".into(),
        ));
    }
    for (p, v) in params.iter_mut().zip(&mut state.velocity) {
        let g = p
            .value
            .grad
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("missing gradient for {}", p.name)))?;
        if g.len() != v.len() {
            return Err(Error::Contract(format!(
                "gradient shape mismatch for {}",
                p.name
            )));
        }
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = momentum * *vi + gi;
        }
        for (x, vi) in p.value.data_mut().iter_mut().zip(v.iter()) {
            *x -= lr * vi;
        }
    }
    Ok(())
}
