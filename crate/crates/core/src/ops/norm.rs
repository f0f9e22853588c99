use crate::error::{invalid, shape_err, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const RUNNING_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    /// Per-channel statistics over batch and trailing axes; channels on axis 1.
    BatchPerChannel,
    /// Per-row statistics over the last axis.
    LayerLastAxis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

/// Running mean and (unbiased) variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T = f32> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(vec![channels]),
            var: Tensor::full(vec![channels], T::one()),
        }
    }

    /// `running ← (1 − m)·running + m·batch`, with the batch variance
    /// bias-corrected by `count / (count − 1)`.
    pub fn update(&mut self, batch_mean: &[T], batch_var: &[T], count: usize) {
        let m = T::lit(RUNNING_MOMENTUM);
        let one = T::one();
        let correction = if count > 1 {
            T::from_usize(count).unwrap() / T::from_usize(count - 1).unwrap()
        } else {
            one
        };
        for (r, &b) in self.mean.data_mut().iter_mut().zip(batch_mean) {
            *r = (one - m) * *r + m * b;
        }
        for (r, &b) in self.var.data_mut().iter_mut().zip(batch_var) {
            *r = (one - m) * *r + m * b * correction;
        }
    }
}

/// Saved intermediates of a normalization, enough for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct NormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    /// Batch mean / biased variance per channel (batch kind, train mode).
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

fn batch_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return shape_err(format!(
            "batch normalization needs N×C×… input, got {shape:?}"
        ));
    }
    let n = shape[0];
    let c = shape[1];
    let inner: usize = shape[2..].iter().product();
    Ok((n, c, inner))
}

fn check_affine<T: Scalar>(gain: &Tensor<T>, shift: &Tensor<T>, len: usize) -> Result<()> {
    if gain.shape() != [len] || shift.shape() != [len] {
        return shape_err(format!(
            "gain {:?} / shift {:?} must both have shape [{len}]",
            gain.shape(),
            shift.shape()
        ));
    }
    Ok(())
}

pub(crate) fn batch_norm_train<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    shift: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let (n, c, inner) = batch_layout(x.shape())?;
    check_affine(gain, shift, c)?;
    let count = T::from_usize(n * inner).unwrap();
    let xd = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            let base = (b * c + ch) * inner;
            s = s + xd[base..base + inner].iter().copied().sum::<T>();
        }
        let mu = s / count;
        let mut v = T::zero();
        for b in 0..n {
            let base = (b * c + ch) * inner;
            for &val in &xd[base..base + inner] {
                v = v + (val - mu) * (val - mu);
            }
        }
        mean[ch] = mu;
        var[ch] = v / count;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    let (g, s) = (gain.data(), shift.data());
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * inner;
            for i in base..base + inner {
                let h = (xd[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                y[i] = h * g[ch] + s[ch];
            }
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), y),
        NormCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    ))
}

pub(crate) fn batch_norm_eval<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    shift: &Tensor<T>,
    stats: &RunningStats<T>,
    eps: T,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let (n, c, inner) = batch_layout(x.shape())?;
    check_affine(gain, shift, c)?;
    if stats.mean.shape() != [c] {
        return shape_err(format!(
            "running statistics have shape {:?}, input has {c} channels",
            stats.mean.shape()
        ));
    }
    let inv_std: Vec<T> = stats
        .var
        .data()
        .iter()
        .map(|&v| (v + eps).sqrt().recip())
        .collect();
    let (g, s, m) = (gain.data(), shift.data(), stats.mean.data());
    let xd = x.data();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * inner;
            for i in base..base + inner {
                let h = (xd[i] - m[ch]) * inv_std[ch];
                xhat[i] = h;
                y[i] = h * g[ch] + s[ch];
            }
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), y),
        NormCache {
            xhat,
            inv_std,
            mean: Vec::new(),
            var: Vec::new(),
        },
    ))
}

/// Returns (dx, dgain, dshift).
pub(crate) fn batch_norm_backward<T: Scalar>(
    shape: &[usize],
    gain: &Tensor<T>,
    cache: &NormCache<T>,
    train: bool,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, inner) = batch_layout(shape).expect("validated in forward");
    let dy = grad_out.data();
    let g = gain.data();
    let mut dgain = vec![T::zero(); c];
    let mut dshift = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * inner;
            for i in base..base + inner {
                dgain[ch] = dgain[ch] + dy[i] * cache.xhat[i];
                dshift[ch] = dshift[ch] + dy[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    let count = T::from_usize(n * inner).unwrap();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * inner;
            let scale = g[ch] * cache.inv_std[ch];
            for i in base..base + inner {
                dx[i] = if train {
                    scale * (dy[i] - dshift[ch] / count - cache.xhat[i] * dgain[ch] / count)
                } else {
                    scale * dy[i]
                };
            }
        }
    }
    (
        Tensor::from_parts(shape.to_vec(), dx),
        Tensor::from_parts(vec![c], dgain),
        Tensor::from_parts(vec![c], dshift),
    )
}

pub(crate) fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    shift: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let d = *x.shape().last().unwrap_or(&0);
    if d == 0 {
        return invalid("layer normalization over an empty axis");
    }
    check_affine(gain, shift, d)?;
    let denom = T::from_usize(d).unwrap();
    let xd = x.data();
    let rows = xd.len() / d;
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    let mut inv_std = vec![T::zero(); rows];
    let (g, s) = (gain.data(), shift.data());
    for r in 0..rows {
        let row = &xd[r * d..(r + 1) * d];
        let mu = row.iter().copied().sum::<T>() / denom;
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / denom;
        let is = (var + eps).sqrt().recip();
        inv_std[r] = is;
        for j in 0..d {
            let h = (row[j] - mu) * is;
            xhat[r * d + j] = h;
            y[r * d + j] = h * g[j] + s[j];
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), y),
        NormCache {
            xhat,
            inv_std,
            mean: Vec::new(),
            var: Vec::new(),
        },
    ))
}

pub(crate) fn layer_norm_backward<T: Scalar>(
    shape: &[usize],
    gain: &Tensor<T>,
    cache: &NormCache<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = *shape.last().unwrap();
    let dy = grad_out.data();
    let rows = dy.len() / d;
    let g = gain.data();
    let denom = T::from_usize(d).unwrap();
    let mut dgain = vec![T::zero(); d];
    let mut dshift = vec![T::zero(); d];
    let mut dx = vec![T::zero(); dy.len()];
    for r in 0..rows {
        let mut sum_dh = T::zero();
        let mut sum_dh_h = T::zero();
        for j in 0..d {
            let i = r * d + j;
            dgain[j] = dgain[j] + dy[i] * cache.xhat[i];
            dshift[j] = dshift[j] + dy[i];
            let dh = dy[i] * g[j];
            sum_dh = sum_dh + dh;
            sum_dh_h = sum_dh_h + dh * cache.xhat[i];
        }
        for j in 0..d {
            let i = r * d + j;
            let dh = dy[i] * g[j];
            dx[i] = cache.inv_std[r] * (dh - sum_dh / denom - cache.xhat[i] * sum_dh_h / denom);
        }
    }
    (
        Tensor::from_parts(shape.to_vec(), dx),
        Tensor::from_parts(vec![d], dgain),
        Tensor::from_parts(vec![d], dshift),
    )
}

/// Normalizes `input` and applies `gain`/`shift`. Batch kind in train mode
/// folds the batch statistics into `state` with momentum 0.1.
pub fn normalize<T: Scalar>(
    input: &Tensor<T>,
    kind: NormKind,
    gain: &Tensor<T>,
    shift: &Tensor<T>,
    eps: T,
    mode: Mode,
    state: Option<&mut RunningStats<T>>,
) -> Result<Tensor<T>> {
    if eps <= T::zero() {
        return invalid("normalization eps must be positive");
    }
    match (kind, mode) {
        (NormKind::LayerLastAxis, _) => layer_norm(input, gain, shift, eps).map(|(y, _)| y),
        (NormKind::BatchPerChannel, Mode::Train) => {
            let (y, cache) = batch_norm_train(input, gain, shift, eps)?;
            if let Some(stats) = state {
                let (n, _, inner) = batch_layout(input.shape())?;
                stats.update(&cache.mean, &cache.var, n * inner);
            }
            Ok(y)
        }
        (NormKind::BatchPerChannel, Mode::Eval) => {
            let Some(stats) = state else {
                return invalid("eval-mode batch normalization needs running statistics");
            };
            batch_norm_eval(input, gain, shift, stats, eps).map(|(y, _)| y)
        }
    }
}
