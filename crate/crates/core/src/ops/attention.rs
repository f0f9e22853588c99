//! Scaled dot-product attention over packed heads. Queries, keys and
//! values are `…×S×(heads·head_dim)` with head `h` occupying columns
//! `h·head_dim .. (h+1)·head_dim`.

use crate::error::{invalid, shape_err, Result};
use crate::tensor::{Scalar, Tensor};

fn layout<T: Scalar>(q: &Tensor<T>, heads: usize, head_dim: usize) -> Result<(usize, usize)> {
    if heads == 0 || head_dim == 0 {
        return invalid(format!(
            "attention needs positive heads and head_dim, got {heads} and {head_dim}"
        ));
    }
    let shape = q.shape();
    if shape.len() < 2 || shape[shape.len() - 1] != heads * head_dim {
        return shape_err(format!(
            "attention input {shape:?} must end in S×{}",
            heads * head_dim
        ));
    }
    let s = shape[shape.len() - 2];
    Ok((q.len() / (s * heads * head_dim), s))
}

/// Returns the attended values and the attention probabilities
/// (`B×heads×S×S`).
pub(crate) fn attention_core<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    head_dim: usize,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (b, s) = layout(q, heads, head_dim)?;
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return shape_err(format!(
            "query {:?}, key {:?} and value {:?} must agree",
            q.shape(),
            k.shape(),
            v.shape()
        ));
    }
    let width = heads * head_dim;
    let scale = T::one() / T::from_usize(head_dim).unwrap().sqrt();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut out = vec![T::zero(); q.len()];
    let mut probs = vec![T::zero(); b * heads * s * s];
    let mut row = vec![T::zero(); s];
    for bi in 0..b {
        let base = bi * s * width;
        for h in 0..heads {
            let off = h * head_dim;
            let p = &mut probs[(bi * heads + h) * s * s..(bi * heads + h + 1) * s * s];
            for i in 0..s {
                let qi = &qd[base + i * width + off..base + i * width + off + head_dim];
                let mut m = T::neg_infinity();
                for (j, r) in row.iter_mut().enumerate() {
                    let kj = &kd[base + j * width + off..base + j * width + off + head_dim];
                    let dot = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
                    *r = dot;
                    m = m.max(dot);
                }
                let mut z = T::zero();
                for r in row.iter_mut() {
                    *r = (*r - m).exp();
                    z = z + *r;
                }
                for j in 0..s {
                    let pij = row[j] / z;
                    p[i * s + j] = pij;
                    let vj = &vd[base + j * width + off..base + j * width + off + head_dim];
                    let oi = &mut out[base + i * width + off..base + i * width + off + head_dim];
                    for (o, &vv) in oi.iter_mut().zip(vj) {
                        *o = *o + pij * vv;
                    }
                }
            }
        }
    }
    Ok((Tensor::from_parts(q.shape().to_vec(), out), probs))
}

/// Returns (dq, dk, dv).
pub(crate) fn attention_core_backward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    probs: &[T],
    heads: usize,
    head_dim: usize,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (b, s) = layout(q, heads, head_dim).expect("validated in forward");
    let width = heads * head_dim;
    let scale = T::one() / T::from_usize(head_dim).unwrap().sqrt();
    let (qd, kd, vd, g) = (q.data(), k.data(), v.data(), grad_out.data());
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); q.len()];
    let mut dv = vec![T::zero(); q.len()];
    let mut dp = vec![T::zero(); s];
    for bi in 0..b {
        let base = bi * s * width;
        for h in 0..heads {
            let off = h * head_dim;
            let p = &probs[(bi * heads + h) * s * s..(bi * heads + h + 1) * s * s];
            let at = |row: usize| base + row * width + off;
            for i in 0..s {
                let gi = &g[at(i)..at(i) + head_dim];
                for j in 0..s {
                    let vj = &vd[at(j)..at(j) + head_dim];
                    dp[j] = gi.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                    let pij = p[i * s + j];
                    for (d, &gg) in dv[at(j)..at(j) + head_dim].iter_mut().zip(gi) {
                        *d = *d + pij * gg;
                    }
                }
                let dot = (0..s).map(|j| dp[j] * p[i * s + j]).sum::<T>();
                for j in 0..s {
                    let ds = p[i * s + j] * (dp[j] - dot) * scale;
                    for d in 0..head_dim {
                        dq[at(i) + d] = dq[at(i) + d] + ds * kd[at(j) + d];
                        dk[at(j) + d] = dk[at(j) + d] + ds * qd[at(i) + d];
                    }
                }
            }
        }
    }
    let shape = q.shape().to_vec();
    (
        Tensor::from_parts(shape.clone(), dq),
        Tensor::from_parts(shape.clone(), dk),
        Tensor::from_parts(shape, dv),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_key_passes_value_through() {
        let q = Tensor::<f64>::new(vec![1, 4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let k = q.map(|x| x * 0.3);
        let v = Tensor::<f64>::new(vec![1, 4], vec![9.0, 8.0, 7.0, 6.0]).unwrap();
        let (o, p) = attention_core(&q, &k, &v, 2, 2).unwrap();
        assert_eq!(o, v);
        assert_eq!(p, vec![1.0, 1.0]);
    }

    #[test]
    fn rejects_degenerate_heads() {
        let q = Tensor::<f64>::zeros(vec![2, 4]);
        assert!(attention_core(&q, &q, &q, 0, 4).is_err());
        assert!(attention_core(&q, &q, &q, 3, 1).is_err());
    }
}
