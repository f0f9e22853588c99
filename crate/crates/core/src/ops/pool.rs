use rayon::prelude::*;

use super::conv::{out_dim, split_video_shape};
use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PoolGeometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    /// Round output sizes up instead of down (windows must still start
    /// inside the input or its left padding).
    pub ceil_mode: bool,
}

impl PoolGeometry {
    pub fn new(kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> Self {
        PoolGeometry {
            kernel,
            stride,
            padding,
            ceil_mode: false,
        }
    }

    pub fn ceil(mut self) -> Self {
        self.ceil_mode = true;
        self
    }

    /// Kernel and stride with `floor((k-1)/2)` padding.
    pub fn with_default_padding(kernel: [usize; 3], stride: [usize; 3]) -> Self {
        PoolGeometry {
            kernel,
            stride,
            padding: super::conv::same_padding(kernel),
            ceil_mode: false,
        }
    }

    pub fn output(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for i in 0..3 {
            if self.padding[i] >= self.kernel[i] {
                return None;
            }
            let (d, k, s, p) = (input[i], self.kernel[i], self.stride[i], self.padding[i]);
            if self.ceil_mode && d >= 1 && s >= 1 && d + 2 * p < k {
                // a single window starting inside the input
                out[i] = 1;
                continue;
            }
            out[i] = out_dim(d, k, s, p)?;
            if self.ceil_mode && (d + 2 * p - k) % s != 0 && out[i] * s < d + p {
                out[i] += 1;
            }
        }
        Some(out)
    }
}

/// Max pooling where padded cells never win. Returns the pooled tensor
/// and, per output cell, the flat in-sample index of the winning input
/// (first occurrence in scan order on ties).
pub fn maxpool3d_with_argmax<T: Scalar>(
    input: &Tensor<T>,
    geom: PoolGeometry,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, [c, t, h, w], batched) = split_video_shape(input.shape())?;
    let Some([to, ho, wo]) = geom.output([t, h, w]) else {
        return shape_err(format!(
            "maxpool window {:?} (padding {:?}) does not fit input {:?}",
            geom.kernel,
            geom.padding,
            input.shape()
        ));
    };
    if geom.stride.contains(&0) {
        return shape_err("maxpool strides must be at least 1");
    }
    let plane_in = t * h * w;
    let plane_out = to * ho * wo;
    let x = input.data();
    let mut out = vec![T::zero(); n * c * plane_out];
    let mut arg = vec![0usize; n * c * plane_out];
    let [kt, kh, kw] = geom.kernel;
    let [st, sh, sw] = geom.stride;
    let [pt, ph, pw] = geom.padding;
    out.par_chunks_mut(plane_out)
        .zip(arg.par_chunks_mut(plane_out))
        .enumerate()
        .for_each(|(pi, (o, a))| {
            let src = &x[pi * plane_in..(pi + 1) * plane_in];
            let mut idx = 0;
            for ot in 0..to {
                let t0 = (ot * st) as isize - pt as isize;
                for oh in 0..ho {
                    let h0 = (oh * sh) as isize - ph as isize;
                    for ow in 0..wo {
                        let w0 = (ow * sw) as isize - pw as isize;
                        let mut best = T::neg_infinity();
                        let mut best_at = usize::MAX;
                        for i in 0..kt as isize {
                            let it = t0 + i;
                            if it < 0 || it >= t as isize {
                                continue;
                            }
                            for j in 0..kh as isize {
                                let ih = h0 + j;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                for k in 0..kw as isize {
                                    let iw = w0 + k;
                                    if iw < 0 || iw >= w as isize {
                                        continue;
                                    }
                                    let flat = (it as usize * h + ih as usize) * w + iw as usize;
                                    let v = src[flat];
                                    if best_at == usize::MAX || v > best {
                                        best = v;
                                        best_at = flat;
                                    }
                                }
                            }
                        }
                        o[idx] = best;
                        a[idx] = best_at;
                        idx += 1;
                    }
                }
            }
        });
    let shape = if batched {
        vec![n, c, to, ho, wo]
    } else {
        vec![c, to, ho, wo]
    };
    Ok((Tensor::from_parts(shape, out), arg))
}

pub fn maxpool3d<T: Scalar>(input: &Tensor<T>, geom: PoolGeometry) -> Result<Tensor<T>> {
    maxpool3d_with_argmax(input, geom).map(|(o, _)| o)
}

pub(crate) fn maxpool3d_backward<T: Scalar>(
    input_shape: &[usize],
    output_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (n, [c, t, h, w], _) = split_video_shape(input_shape).expect("validated in forward");
    let plane_in = t * h * w;
    let plane_out: usize = output_shape[output_shape.len() - 3..].iter().product();
    let mut dx = vec![T::zero(); n * c * plane_in];
    let g = grad_out.data();
    dx.par_chunks_mut(plane_in).enumerate().for_each(|(pi, d)| {
        for k in 0..plane_out {
            let at = argmax[pi * plane_out + k];
            d[at] = d[at] + g[pi * plane_out + k];
        }
    });
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Mean over the two trailing spatial axes, `…×H×W → …×1×1`.
///
/// Each plane is summed in ascending value order, so the result is
/// exactly invariant under any permutation of spatial positions.
pub fn spatial_mean<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = input.shape();
    if shape.len() < 2 {
        return shape_err(format!("spatial mean needs at least 2 axes, got {shape:?}"));
    }
    let hw = shape[shape.len() - 2] * shape[shape.len() - 1];
    let denom = T::from_usize(hw).unwrap();
    let out: Vec<T> = input
        .data()
        .par_chunks(hw)
        .map(|plane| {
            let mut v = plane.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            v.into_iter().fold(T::zero(), |a, b| a + b) / denom
        })
        .collect();
    let mut out_shape = shape.to_vec();
    let k = out_shape.len();
    out_shape[k - 2] = 1;
    out_shape[k - 1] = 1;
    Ok(Tensor::from_parts(out_shape, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_window_is_identity() {
        let x = Tensor::<f32>::from_fn(vec![2, 3, 4, 5], |i| (i as f32).sin());
        let y = maxpool3d(&x, PoolGeometry::new([1, 1, 1], [1, 1, 1], [0, 0, 0])).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn picks_block_max() {
        let x = Tensor::<f32>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = maxpool3d(&x, PoolGeometry::new([1, 2, 2], [1, 2, 2], [0, 0, 0])).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn padded_cells_never_win() {
        let x = Tensor::<f32>::new(vec![1, 1, 1, 2], vec![-5.0, -3.0]).unwrap();
        let y = maxpool3d(&x, PoolGeometry::new([1, 1, 3], [1, 1, 1], [0, 0, 1])).unwrap();
        assert_eq!(y.data(), &[-3.0, -3.0]);
    }

    #[test]
    fn stem_pool_output_size() {
        let g = PoolGeometry::new([1, 5, 5], [1, 4, 4], [0, 2, 2]);
        assert_eq!(g.output([32, 224, 224]), Some([32, 56, 56]));
    }

    #[test]
    fn ceil_mode_rounds_up() {
        let g = PoolGeometry::new([1, 2, 2], [1, 2, 2], [0, 0, 0]).ceil();
        assert_eq!(g.output([1, 7, 8]), Some([1, 4, 4]));
        assert_eq!(PoolGeometry::new([1, 3, 3], [1, 3, 3], [0, 0, 0]).ceil().output([1, 1, 2]), Some([1, 1, 1]));
        let x = Tensor::<f32>::from_fn(vec![1, 1, 1, 3], |i| i as f32);
        let y = maxpool3d(&x, g).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn ties_route_to_first_occurrence() {
        let x = Tensor::<f64>::new(vec![1, 1, 1, 3], vec![2.0, 2.0, 1.0]).unwrap();
        let (_, arg) = maxpool3d_with_argmax(&x, PoolGeometry::new([1, 1, 3], [1, 1, 3], [0, 0, 0])).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn oversized_window_rejected() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 2, 2]);
        assert!(maxpool3d(&x, PoolGeometry::new([1, 3, 3], [1, 1, 1], [0, 0, 0])).is_err());
    }

    #[test]
    fn spatial_mean_is_permutation_exact() {
        let x = Tensor::<f32>::from_fn(vec![2, 1, 3, 3], |i| (i as f32 * 0.731).sin() * 1e3);
        let mut y = x.clone();
        for plane in y.data_mut().chunks_mut(9) {
            plane.reverse();
            plane.swap(0, 4);
        }
        assert_eq!(spatial_mean(&x).unwrap(), spatial_mean(&y).unwrap());
    }
}
