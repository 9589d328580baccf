use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function at `theta`.
pub fn finite_difference_grad<F>(mut f: F, theta: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {eps}")));
    }
    let mut probe = theta.clone();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.push((up - down) / (2.0 * eps));
    }
    Tensor::new(theta.shape().to_vec(), grad)
}

/// `|a - b| / max(|a|, |b|, floor)`: relative error that stays meaningful
/// for gradients near zero.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
