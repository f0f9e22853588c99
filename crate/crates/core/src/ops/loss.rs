use crate::error::{invalid, Result};
use crate::tensor::Scalar;

use super::activation::sigmoid;

/// Binary cross-entropy of a logit against a {0,1} label, computed as
/// `max(z,0) − z·y + ln(1 + e^{−|z|})`.
pub fn bce_with_logits<T: Scalar>(logit: T, label: T) -> Result<T> {
    if label != T::zero() && label != T::one() {
        return invalid(format!("label must be 0 or 1, got {label}"));
    }
    Ok(logit.max(T::zero()) - logit * label + (-logit.abs()).exp().ln_1p())
}

/// `∂/∂z` of [`bce_with_logits`]: `σ(z) − y`.
pub fn bce_with_logits_grad<T: Scalar>(logit: T, label: T) -> T {
    sigmoid(logit) - label
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let ln2 = 2f64.ln();
        assert!((bce_with_logits(0.0, 1.0).unwrap() - ln2).abs() < 1e-15);
        assert!((bce_with_logits(0.0, 0.0).unwrap() - ln2).abs() < 1e-15);
        let l = bce_with_logits(3.0f64, 1.0).unwrap();
        assert!((l - (1.0 + (-3.0f64).exp()).ln()).abs() < 1e-15);
        assert!((l - 0.04859).abs() < 1e-5);
        assert_eq!(bce_with_logits_grad(0.0f64, 1.0), -0.5);
    }

    #[test]
    fn finite_at_extreme_logits() {
        for z in [-100.0f32, 100.0] {
            for y in [0.0, 1.0] {
                let l = bce_with_logits(z, y).unwrap();
                assert!(l.is_finite() && l >= 0.0);
            }
        }
        assert!(bce_with_logits(0.0f32, 0.5).is_err());
    }
}
