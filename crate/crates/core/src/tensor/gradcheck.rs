//! Central finite-difference check of analytic gradients.

use super::Tensor;
use crate::error::{Error, Result};

/// Added to `|analytic|` in the relative-error denominator so entries whose
/// true gradient is zero are judged on absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Largest relative error between the backward-pass gradient of the scalar
/// function `f` at `x` and its central difference with step `h`:
/// `max_i |g_i - (f(x + h e_i) - f(x - h e_i)) / 2h| / (|g_i| + RELATIVE_FLOOR)`.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let all: Vec<usize> = (0..x.numel()).collect();
    finite_difference_check_at(f, x, h, &all)
}

/// [`finite_difference_check`] restricted to the listed element indices.
pub fn finite_difference_check_at<F>(f: F, x: &Tensor, h: f64, indices: &[usize]) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let leaf = x.detached(true);
    let out = f(&leaf)?;
    out.backward()?;
    let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for &i in indices {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&Tensor::from_vec(x.shape(), probe.clone())?)?.item()?;
        probe[i] = orig - h;
        let minus = f(&Tensor::from_vec(x.shape(), probe.clone())?)?.item()?;
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + RELATIVE_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}
