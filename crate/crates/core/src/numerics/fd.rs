use super::{Element, Tensor};
use crate::{Error, Result};

/// Central-difference gradient of a scalar function:
/// `(f(x + εe_k) − f(x − εe_k)) / 2ε` for every coordinate `k`.
pub fn finite_difference_grad<T, F>(mut f: F, x: &Tensor<T>, eps: f64) -> Result<Tensor<T>>
where
    T: Element,
    F: FnMut(&Tensor<T>) -> Result<f64>,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    let h = T::of(eps);
    for k in 0..x.len() {
        let orig = probe[k];
        probe[k] = orig + h;
        let up = f(&probe)?;
        probe[k] = orig - h;
        let down = f(&probe)?;
        probe[k] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Oracle(k));
        }
        grad[k] = T::of((up - down) / (2.0 * eps));
    }
    Ok(grad)
}
