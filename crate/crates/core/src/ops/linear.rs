use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Scalar, Tensor};

fn linear_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let [dout, din] = *w.shape() else {
        return shape_err(format!("linear weights must be Dout×Din, got {:?}", w.shape()));
    };
    let last = *x.shape().last().unwrap_or(&0);
    if last != din {
        return shape_err(format!(
            "linear input {:?} does not match weights {:?}",
            x.shape(),
            w.shape()
        ));
    }
    Ok((x.len() / din, din, dout))
}

/// `y = x·Wᵀ + b` over the last axis; leading axes are preserved.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (rows, din, dout) = linear_dims(x, w)?;
    let mut out = vec![T::zero(); rows * dout];
    gemm(x.data(), false, w.data(), true, &mut out, rows, din, dout, false);
    if let Some(b) = b {
        if b.shape() != [dout] {
            return shape_err(format!("linear bias {:?} must be [{dout}]", b.shape()));
        }
        for row in out.chunks_mut(dout) {
            for (v, &bb) in row.iter_mut().zip(b.data()) {
                *v = *v + bb;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = dout;
    Ok(Tensor::from_parts(shape, out))
}

/// Returns (dx, dw, db).
pub(crate) fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (rows, din, dout) = linear_dims(x, w).expect("validated in forward");
    let g = grad_out.data();
    let mut dx = vec![T::zero(); rows * din];
    gemm(g, false, w.data(), false, &mut dx, rows, dout, din, false);
    let mut dw = vec![T::zero(); dout * din];
    gemm(g, true, x.data(), false, &mut dw, dout, rows, din, false);
    let mut db = vec![T::zero(); dout];
    for row in g.chunks(dout) {
        for (a, &v) in db.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(vec![dout, din], dw),
        Tensor::from_parts(vec![dout], db),
    )
}
