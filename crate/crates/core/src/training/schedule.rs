use crate::error::{Error, Result};

/// `initial_lr · (1 − iter / max_iter)^power`.
pub fn poly_lr(initial_lr: f64, current_iter: usize, max_iter: usize, power: f64) -> Result<f64> {
    if max_iter == 0 || current_iter > max_iter {
        return Err(Error::Contract(format!(
            "poly_lr: iteration {current_iter} outside 0..={max_iter}"
        )));
    }
    Ok(initial_lr * (1.0 - current_iter as f64 / max_iter as f64).powf(power))
}
