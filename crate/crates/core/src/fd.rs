//! Central finite differences: the independent gradient oracle.
//!
//! This module never touches the tape in `graph`; it only evaluates the given
//! closure, so it remains a valid cross-check for `Graph::backward`.

use alloc::format;
use alloc::vec::Vec;

use crate::array::Array;
use crate::error::{Error, Result};

/// Central-difference gradient estimate `(f(x + h e_i) - f(x - h e_i)) / 2h`
/// per coordinate. Rejects non-finite function values.
pub fn finite_difference<F>(mut f: F, x: &Array, h: f64) -> Result<Array>
where
    F: FnMut(&Array) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParam {
            name: "finite_difference step",
            message: format!("h must be positive and finite, got {h}"),
        });
    }
    let mut grad = Vec::with_capacity(x.len());
    let base = x.data();
    for i in 0..x.len() {
        let mut plus = base.to_vec();
        plus[i] += h;
        let mut minus = base.to_vec();
        minus[i] -= h;
        let fp = f(&Array::from_vec(x.shape().to_vec(), plus)?)?;
        let fm = f(&Array::from_vec(x.shape().to_vec(), minus)?)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                context: "finite_difference evaluation",
                index: Some(i),
            });
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Array::from_vec(x.shape().to_vec(), grad)
}

/// Relative disagreement between two gradient vectors, measured as
/// `|a - b|_inf / max(|a|_inf, |b|_inf, floor)`. The floor keeps the ratio
/// meaningful for near-zero gradients.
pub fn max_relative_error(a: &Array, b: &Array) -> Result<f64> {
    let diff = a.sub(b)?;
    let scale = a.max_abs().max(b.max_abs()).max(1e-6);
    Ok(diff.max_abs() / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn quadratic_is_exact_up_to_rounding() {
        // f = ||x||^2, grad = 2x; central differences are exact for quadratics.
        let x = Array::vector(vec![1.0, 0.0]);
        let g = finite_difference(|v: &Array| Ok(v.sq_norm()), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-8);
        assert!(g.data()[1].abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Array::vector(vec![0.3, -0.7, 4.0]);
        let g = finite_difference(|_| Ok(42.0), &x, 1e-4).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let x = Array::scalar(1.0);
        assert!(finite_difference(|_| Ok(0.0), &x, 0.0).is_err());
        assert!(finite_difference(|_| Ok(0.0), &x, -1e-5).is_err());
    }

    #[test]
    fn rejects_non_finite_values() {
        let x = Array::scalar(1.0);
        let r = finite_difference(|_| Ok(f64::NAN), &x, 1e-5);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }
}
