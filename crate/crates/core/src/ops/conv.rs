use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Scalar, Tensor};

/// Stride and zero-padding of a 3D convolution, as (time, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Conv3dGeometry {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dGeometry {
    pub fn new(stride: [usize; 3], padding: [usize; 3]) -> Self {
        Conv3dGeometry { stride, padding }
    }

    /// Unit stride with `floor((k-1)/2)` padding per axis.
    pub fn same(kernel: [usize; 3]) -> Self {
        Conv3dGeometry {
            stride: [1, 1, 1],
            padding: same_padding(kernel),
        }
    }
}

pub fn same_padding(kernel: [usize; 3]) -> [usize; 3] {
    kernel.map(|k| k.saturating_sub(1) / 2)
}

/// `floor((d + 2p - k) / s) + 1`, or `None` when the window does not fit.
pub fn out_dim(d: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    if s == 0 || k == 0 || d + 2 * p < k {
        return None;
    }
    Some((d + 2 * p - k) / s + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub cin: usize,
    pub input: [usize; 3],
    pub cout: usize,
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub geom: Conv3dGeometry,
}

impl ConvDims {
    fn col_rows(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    fn positions(&self) -> usize {
        self.output.iter().product()
    }

    fn input_len(&self) -> usize {
        self.cin * self.input.iter().product::<usize>()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.geom.stride == [1, 1, 1] && self.geom.padding == [0, 0, 0]
    }
}

/// Splits an input shape into (batch, C, T, H, W); 4D inputs have batch 1.
pub(crate) fn split_video_shape(shape: &[usize]) -> Result<(usize, [usize; 4], bool)> {
    match *shape {
        [c, t, h, w] => Ok((1, [c, t, h, w], false)),
        [n, c, t, h, w] => Ok((n, [c, t, h, w], true)),
        _ => shape_err(format!(
            "expected C×T×H×W or N×C×T×H×W input, got {shape:?}"
        )),
    }
}

pub(crate) fn conv_dims(
    input_shape: &[usize],
    weight_shape: &[usize],
    geom: Conv3dGeometry,
) -> Result<(usize, bool, ConvDims)> {
    let (n, [cin, t, h, w], batched) = split_video_shape(input_shape)?;
    let [cout, wcin, kt, kh, kw] = *weight_shape else {
        return shape_err(format!(
            "conv3d weights must be Cout×Cin×Kt×Kh×Kw, got {weight_shape:?}"
        ));
    };
    if wcin != cin {
        return shape_err(format!(
            "conv3d input {input_shape:?} has {cin} channels but weights {weight_shape:?} expect {wcin}"
        ));
    }
    if geom.stride.contains(&0) {
        return shape_err("conv3d strides must be at least 1");
    }
    let mut output = [0; 3];
    for (axis, ((&d, &k), (&s, &p))) in [t, h, w]
        .iter()
        .zip(&[kt, kh, kw])
        .zip(geom.stride.iter().zip(&geom.padding))
        .enumerate()
    {
        output[axis] = match out_dim(d, k, s, p) {
            Some(o) => o,
            None => {
                return shape_err(format!(
                    "conv3d produces an empty output on axis {axis}: input {input_shape:?}, kernel {weight_shape:?}, padding {:?}",
                    geom.padding
                ))
            }
        };
    }
    Ok((
        n,
        batched,
        ConvDims {
            cin,
            input: [t, h, w],
            cout,
            kernel: [kt, kh, kw],
            output,
            geom,
        },
    ))
}

fn im2col<T: Scalar>(x: &[T], d: &ConvDims, cols: &mut [T]) {
    let [t, h, w] = d.input;
    let [kt, kh, kw] = d.kernel;
    let [to, ho, wo] = d.output;
    let [st, sh, sw] = d.geom.stride;
    let [pt, ph, pw] = d.geom.padding;
    let p = d.positions();
    let mut row = 0;
    for ci in 0..d.cin {
        let plane = &x[ci * t * h * w..(ci + 1) * t * h * w];
        for a in 0..kt {
            for b in 0..kh {
                for c in 0..kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for ot in 0..to {
                        let it = (ot * st + a) as isize - pt as isize;
                        for oh in 0..ho {
                            let ih = (oh * sh + b) as isize - ph as isize;
                            let valid_th = it >= 0 && (it as usize) < t && ih >= 0 && (ih as usize) < h;
                            for ow in 0..wo {
                                let iw = (ow * sw + c) as isize - pw as isize;
                                dst[idx] = if valid_th && iw >= 0 && (iw as usize) < w {
                                    plane[(it as usize * h + ih as usize) * w + iw as usize]
                                } else {
                                    T::zero()
                                };
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], d: &ConvDims, dx: &mut [T]) {
    let [t, h, w] = d.input;
    let [kt, kh, kw] = d.kernel;
    let [to, ho, wo] = d.output;
    let [st, sh, sw] = d.geom.stride;
    let [pt, ph, pw] = d.geom.padding;
    let p = d.positions();
    let mut row = 0;
    for ci in 0..d.cin {
        let plane = &mut dx[ci * t * h * w..(ci + 1) * t * h * w];
        for a in 0..kt {
            for b in 0..kh {
                for c in 0..kw {
                    let src = &cols[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for ot in 0..to {
                        let it = (ot * st + a) as isize - pt as isize;
                        for oh in 0..ho {
                            let ih = (oh * sh + b) as isize - ph as isize;
                            let valid_th = it >= 0 && (it as usize) < t && ih >= 0 && (ih as usize) < h;
                            for ow in 0..wo {
                                let iw = (ow * sw + c) as isize - pw as isize;
                                if valid_th && iw >= 0 && (iw as usize) < w {
                                    let k = (it as usize * h + ih as usize) * w + iw as usize;
                                    plane[k] = plane[k] + src[idx];
                                }
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn conv_sample<T: Scalar>(x: &[T], weight: &[T], bias: Option<&[T]>, d: &ConvDims, out: &mut [T]) {
    let p = d.positions();
    let rows = d.col_rows();
    if d.is_pointwise() {
        gemm(weight, false, x, false, out, d.cout, rows, p, false);
    } else {
        let mut cols = vec![T::zero(); rows * p];
        im2col(x, d, &mut cols);
        gemm(weight, false, &cols, false, out, d.cout, rows, p, false);
    }
    if let Some(b) = bias {
        for (co, chunk) in out.chunks_mut(p).enumerate() {
            for v in chunk {
                *v = *v + b[co];
            }
        }
    }
}

/// 3D convolution of a `C×T×H×W` (or batched `N×C×T×H×W`) input with
/// `Cout×Cin×Kt×Kh×Kw` weights and zero padding.
pub fn conv3d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: Conv3dGeometry,
) -> Result<Tensor<T>> {
    let (n, batched, d) = conv_dims(input.shape(), weight.shape(), geom)?;
    if let Some(b) = bias {
        if b.shape() != [d.cout] {
            return shape_err(format!(
                "conv3d bias must have shape [{}], got {:?}",
                d.cout,
                b.shape()
            ));
        }
    }
    let out_len = d.cout * d.positions();
    let in_len = d.input_len();
    let mut out = vec![T::zero(); n * out_len];
    let x = input.data();
    let wd = weight.data();
    let bd = bias.map(|b| b.data());
    out.par_chunks_mut(out_len)
        .enumerate()
        .for_each(|(i, o)| conv_sample(&x[i * in_len..(i + 1) * in_len], wd, bd, &d, o));
    let [to, ho, wo] = d.output;
    let shape = if batched {
        vec![n, d.cout, to, ho, wo]
    } else {
        vec![d.cout, to, ho, wo]
    };
    Ok(Tensor::from_parts(shape, out))
}

pub(crate) struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub(crate) fn conv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    geom: Conv3dGeometry,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (n, _, d) = conv_dims(input.shape(), weight.shape(), geom)?;
    let p = d.positions();
    let rows = d.col_rows();
    let in_len = d.input_len();
    let out_len = d.cout * p;
    let x = input.data();
    let g = grad_out.data();
    let wd = weight.data();
    let mut dx = vec![T::zero(); n * in_len];

    let per_sample: Vec<Vec<T>> = dx
        .par_chunks_mut(in_len)
        .enumerate()
        .map(|(i, dxi)| {
            let xi = &x[i * in_len..(i + 1) * in_len];
            let gi = &g[i * out_len..(i + 1) * out_len];
            let mut dw = vec![T::zero(); d.cout * rows];
            if d.is_pointwise() {
                gemm(gi, false, xi, true, &mut dw, d.cout, p, rows, false);
                gemm(wd, true, gi, false, dxi, rows, d.cout, p, false);
            } else {
                let mut cols = vec![T::zero(); rows * p];
                im2col(xi, &d, &mut cols);
                gemm(gi, false, &cols, true, &mut dw, d.cout, p, rows, false);
                gemm(wd, true, gi, false, &mut cols, rows, d.cout, p, false);
                col2im(&cols, &d, dxi);
            }
            dw
        })
        .collect();

    // Fixed summation order keeps results independent of the thread count.
    let mut dw = vec![T::zero(); d.cout * rows];
    for s in &per_sample {
        for (a, &b) in dw.iter_mut().zip(s) {
            *a = *a + b;
        }
    }
    let mut db = vec![T::zero(); d.cout];
    for i in 0..n {
        for (co, acc) in db.iter_mut().enumerate() {
            let start = i * out_len + co * p;
            *acc = *acc + g[start..start + p].iter().copied().sum::<T>();
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_parts(input.shape().to_vec(), dx),
        weight: Tensor::from_parts(weight.shape().to_vec(), dw),
        bias: Tensor::from_parts(vec![d.cout], db),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct sliding-window reference, independent of im2col/gemm.
    fn conv_reference(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        geom: Conv3dGeometry,
    ) -> Tensor<f64> {
        let [c, t, h, ww] = <[usize; 4]>::try_from(x.shape()).unwrap();
        let [co, _, kt, kh, kw] = <[usize; 5]>::try_from(w.shape()).unwrap();
        let o = |d, k, i: usize| out_dim(d, k, geom.stride[i], geom.padding[i]).unwrap();
        let (to, ho, wo) = (o(t, kt, 0), o(h, kh, 1), o(ww, kw, 2));
        let mut out = Tensor::zeros(vec![co, to, ho, wo]);
        let xd = x.data();
        let wdat = w.data();
        for f in 0..co {
            for a in 0..to {
                for b in 0..ho {
                    for cc in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for i in 0..kt {
                                for j in 0..kh {
                                    for k in 0..kw {
                                        let it = (a * geom.stride[0] + i) as isize - geom.padding[0] as isize;
                                        let ih = (b * geom.stride[1] + j) as isize - geom.padding[1] as isize;
                                        let iw = (cc * geom.stride[2] + k) as isize - geom.padding[2] as isize;
                                        if it < 0 || ih < 0 || iw < 0 || it >= t as isize || ih >= h as isize || iw >= ww as isize {
                                            continue;
                                        }
                                        let xv = xd[((ci * t + it as usize) * h + ih as usize) * ww + iw as usize];
                                        let wv = wdat[(((f * c + ci) * kt + i) * kh + j) * kw + k];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        out.data_mut()[((f * to + a) * ho + b) * wo + cc] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::<f32>::new(vec![1, 1, 1, 1], vec![7.0]).unwrap();
        let w = Tensor::<f32>::new(vec![1, 1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv3d(&x, &w, None, Conv3dGeometry::same([1, 1, 1])).unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn temporal_box_filter_with_padding() {
        // padded sequence [0,1,2,3,0] summed over windows of 3
        let x = Tensor::<f32>::new(vec![1, 3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let w = Tensor::<f32>::new(vec![1, 1, 3, 1, 1], vec![1.0; 3]).unwrap();
        let y = conv3d(&x, &w, None, Conv3dGeometry::new([1, 1, 1], [1, 0, 0])).unwrap();
        assert_eq!(y.data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn errors_name_shapes() {
        let x = Tensor::<f32>::zeros(vec![2, 4, 4, 4]);
        let w = Tensor::<f32>::zeros(vec![1, 3, 1, 1, 1]);
        let err = conv3d(&x, &w, None, Conv3dGeometry::same([1, 1, 1])).unwrap_err().to_string();
        assert!(err.contains("[2, 4, 4, 4]") && err.contains("[1, 3, 1, 1, 1]"), "{err}");
        let w = Tensor::<f32>::zeros(vec![1, 2, 5, 1, 1]);
        assert!(conv3d(&x, &w, None, Conv3dGeometry::new([1, 1, 1], [0, 0, 0])).is_err());
    }

    #[test]
    fn matches_direct_reference_on_odd_geometry() {
        let x = Tensor::<f64>::from_fn(vec![2, 5, 6, 7], |i| ((i * 37 % 11) as f64 - 5.0) / 3.0);
        let w = Tensor::<f64>::from_fn(vec![3, 2, 3, 2, 3], |i| ((i * 13 % 7) as f64 - 3.0) / 5.0);
        let geom = Conv3dGeometry::new([2, 1, 2], [1, 1, 0]);
        let y = conv3d(&x, &w, None, geom).unwrap();
        let r = conv_reference(&x, &w, geom);
        assert_eq!(y.shape(), r.shape());
        assert!(y.max_abs_diff(&r) < 1e-12);
    }

    #[test]
    fn batched_matches_per_sample() {
        let x = Tensor::<f64>::from_fn(vec![3, 2, 4, 3, 3], |i| (i as f64 * 0.37).sin());
        let w = Tensor::<f64>::from_fn(vec![4, 2, 3, 1, 1], |i| (i as f64 * 0.11).cos());
        let b = Tensor::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let geom = Conv3dGeometry::same([3, 1, 1]);
        let y = conv3d(&x, &w, Some(&b), geom).unwrap();
        for i in 0..3 {
            let yi = conv3d(&x.index_axis0(i), &w, Some(&b), geom).unwrap();
            assert_eq!(y.index_axis0(i), yi);
        }
    }
}
