use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

fn axis_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return shape_err(format!("softmax axis {axis} out of range for {shape:?}"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Numerically stable softmax along `axis` (max-subtracted).
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = axis_layout(x.shape(), axis)?;
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let mut m = T::neg_infinity();
            for k in 0..len {
                m = m.max(xd[at(k)]);
            }
            let mut s = T::zero();
            for k in 0..len {
                let e = (xd[at(k)] - m).exp();
                out[at(k)] = e;
                s = s + e;
            }
            for k in 0..len {
                out[at(k)] = out[at(k)] / s;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// `dx = y ⊙ (dy − Σ dy⊙y)` along `axis`.
pub(crate) fn softmax_backward<T: Scalar>(y: &Tensor<T>, axis: usize, grad_out: &Tensor<T>) -> Tensor<T> {
    let (outer, len, inner) = axis_layout(y.shape(), axis).expect("validated in forward");
    let yd = y.data();
    let g = grad_out.data();
    let mut dx = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let dot = (0..len).map(|k| g[at(k)] * yd[at(k)]).sum::<T>();
            for k in 0..len {
                dx[at(k)] = yd[at(k)] * (g[at(k)] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_and_closed_form() {
        let y = softmax(&Tensor::<f64>::from_vec(vec![0.3; 4]), 0).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let y = softmax(&Tensor::<f64>::from_vec(vec![0.0, 2f64.ln()]), 0).unwrap();
        assert!((y.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((y.data()[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shift_invariant_on_middle_axis() {
        let x = Tensor::<f64>::from_fn(vec![2, 3, 2], |i| (i as f64 * 0.9).sin());
        let shifted = x.map(|v| v + 1000.0);
        let a = softmax(&x, 1).unwrap();
        let b = softmax(&shifted, 1).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-6);
        for o in 0..2 {
            for i in 0..2 {
                let s: f64 = (0..3).map(|k| a.data()[(o * 3 + k) * 2 + i]).sum();
                assert!((s - 1.0).abs() <= 1e-6);
            }
        }
    }
}
