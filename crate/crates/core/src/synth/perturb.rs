//! Robustness perturbations at five intensity levels.
//!
//! | kind       | parameter         | 1     | 2   | 3   | 4   | 5   |
//! |------------|-------------------|-------|-----|-----|-----|-----|
//! | block      | zeroed 8×8 blocks | 2     | 4   | 8   | 16  | 32  |
//! | saturation | chroma scale      | 0.8   | 0.6 | 0.4 | 0.2 | 0.0 |
//! | blur       | Gaussian σ (px)   | 1     | 2   | 3   | 4   | 5   |
//! | resize     | down/up factor    | 1/1.5 | 1/2 | 1/3 | 1/4 | 1/6 |
//!
//! Level 0 returns the clip unchanged. Saturation splits each pixel into
//! luma `Y = 0.299 R + 0.587 G + 0.114 B` and chroma `c − Y`, then returns
//! `Y + f·(c − Y)`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{hash_str, mix, Clip};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Perturbation {
    Block,
    Saturation,
    Blur,
    Resize,
}

impl Perturbation {
    pub const ALL: [Perturbation; 4] = [Perturbation::Block, Perturbation::Saturation, Perturbation::Blur, Perturbation::Resize];

    pub fn as_str(self) -> &'static str {
        match self {
            Perturbation::Block => "block",
            Perturbation::Saturation => "saturation",
            Perturbation::Blur => "blur",
            Perturbation::Resize => "resize",
        }
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Perturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Perturbation::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .map_or_else(|| invalid(format!("unknown perturbation `{s}`")), Ok)
    }
}

const BLOCKS: [usize; 5] = [2, 4, 8, 16, 32];
const CHROMA: [f64; 5] = [0.8, 0.6, 0.4, 0.2, 0.0];
const SIGMA: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];
const RESIZE: [f64; 5] = [1.0 / 1.5, 0.5, 1.0 / 3.0, 0.25, 1.0 / 6.0];

/// Applies `kind` at `level` (0..=5) to every frame of the clip. The block
/// pattern is drawn once per clip from its seed.
pub fn perturb(clip: &Clip, kind: Perturbation, level: usize) -> Result<Clip> {
    if level > 5 {
        return invalid(format!("perturbation level must be in 0..=5, got {level}"));
    }
    if level == 0 {
        return Ok(clip.clone());
    }
    let [t, h, w] = clip.dims();
    let src = clip.video.data();
    let plane = h * w;
    let mut out: Vec<f32> = src.to_vec();
    match kind {
        Perturbation::Block => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(clip.seed, hash_str("block") + level as u64));
            let (bh, bw) = (8.min(h), 8.min(w));
            for _ in 0..BLOCKS[level - 1] {
                let y0 = rng.gen_range(0..=h - bh);
                let x0 = rng.gen_range(0..=w - bw);
                for c in 0..3 {
                    for ti in 0..t {
                        for y in y0..y0 + bh {
                            let row = (c * t + ti) * plane + y * w;
                            out[row + x0..row + x0 + bw].fill(0.0);
                        }
                    }
                }
            }
        }
        Perturbation::Saturation => {
            let f = CHROMA[level - 1];
            let n = t * plane;
            for i in 0..n {
                let (r, g, b) = (src[i] as f64, src[n + i] as f64, src[2 * n + i] as f64);
                let y = 0.299 * r + 0.587 * g + 0.114 * b;
                for (c, v) in [r, g, b].into_iter().enumerate() {
                    out[c * n + i] = (y + f * (v - y)).clamp(0.0, 1.0) as f32;
                }
            }
        }
        Perturbation::Blur => {
            let kernel = gaussian_kernel(SIGMA[level - 1]);
            for (i, frame) in src.chunks(plane).enumerate() {
                let blurred = blur_frame(frame, h, w, &kernel);
                out[i * plane..(i + 1) * plane].copy_from_slice(&blurred);
            }
        }
        Perturbation::Resize => {
            let f = RESIZE[level - 1];
            let (sh, sw) = (((h as f64 * f).round() as usize).max(1), ((w as f64 * f).round() as usize).max(1));
            for (i, frame) in src.chunks(plane).enumerate() {
                let small = resize_bilinear(frame, h, w, sh, sw);
                let back = resize_bilinear(&small, sh, sw, h, w);
                out[i * plane..(i + 1) * plane].copy_from_slice(&back);
            }
        }
    }
    Ok(Clip {
        video: Tensor::new(clip.video.shape().to_vec(), out)?,
        ..clip.clone()
    })
}

/// Normalized 1D Gaussian taps over radius `ceil(3σ)`.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / total).collect()
}

/// Separable blur with replicated borders.
fn blur_frame(frame: &[f32], h: usize, w: usize, kernel: &[f64]) -> Vec<f32> {
    let r = (kernel.len() / 2) as i64;
    let clampi = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * frame[y * w + clampi(x as i64 + k as i64 - r, w)] as f64)
                .sum();
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let v: f64 = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clampi(y as i64 + k as i64 - r, h) * w + x])
                .sum();
            out[y * w + x] = v.clamp(0.0, 1.0) as f32;
        }
    }
    out
}

/// Bilinear resampling with half-pixel centers and clamped edges.
fn resize_bilinear(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let coord = |dst: usize, n_in: usize, n_out: usize| -> (usize, usize, f32) {
        let s = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, (s - i0 as f64) as f32)
    };
    let mut out = vec![0.0f32; oh * ow];
    for y in 0..oh {
        let (y0, y1, fy) = coord(y, h, oh);
        for x in 0..ow {
            let (x0, x1, fx) = coord(x, w, ow);
            let top = src[y0 * w + x0] + fx * (src[y0 * w + x1] - src[y0 * w + x0]);
            let bot = src[y1 * w + x0] + fx * (src[y1 * w + x1] - src[y1 * w + x0]);
            out[y * ow + x] = top + fy * (bot - top);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_real, Label, SceneParams};

    fn clip() -> Clip {
        gen_real(&SceneParams::random(5, 32, 32), 4, 32, 32).unwrap()
    }

    fn constant(v: f32) -> Clip {
        Clip {
            video: Tensor::full(vec![3, 2, 32, 32], v),
            label: Label::Real,
            method: "real".into(),
            video_id: "c".into(),
            seed: 1,
        }
    }

    #[test]
    fn grayscale_at_full_desaturation() {
        let p = perturb(&clip(), Perturbation::Saturation, 5).unwrap();
        let n = 4 * 32 * 32;
        let d = p.video.data();
        for i in 0..n {
            assert_eq!(d[i], d[n + i]);
            assert_eq!(d[i], d[2 * n + i]);
        }
    }

    #[test]
    fn impulse_blur_mass() {
        let mut c = constant(0.0);
        c.video.data_mut()[16 * 32 + 16] = 1.0;
        let b = perturb(&c, Perturbation::Blur, 1).unwrap();
        let mass: f64 = b.video.data()[..32 * 32].iter().map(|v| *v as f64).sum();
        assert!((mass - 1.0).abs() < 1e-4, "{mass}");
        // centre tap of a unit-σ discrete Gaussian, squared for two axes
        let k = gaussian_kernel(1.0);
        assert!((b.video.data()[16 * 32 + 16] as f64 - k[3] * k[3]).abs() < 1e-6);
        assert!((k[3] - 1.0 / (2.0 * (-0.5f64).exp() + 2.0 * (-2.0f64).exp() + 2.0 * (-4.5f64).exp() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn constants_survive_resize() {
        for level in 1..=5 {
            let c = constant(0.375);
            assert_eq!(perturb(&c, Perturbation::Resize, level).unwrap(), c);
        }
    }

    #[test]
    fn level_zero_is_identity_and_six_rejected() {
        let c = clip();
        for k in Perturbation::ALL {
            assert_eq!(perturb(&c, k, 0).unwrap(), c);
            assert!(perturb(&c, k, 6).is_err());
        }
    }

    #[test]
    fn blocks_repeat_across_frames() {
        let c = constant(0.5);
        let p = perturb(&c, Perturbation::Block, 3).unwrap();
        let plane = 32 * 32;
        let d = p.video.data();
        assert_eq!(&d[..plane], &d[plane..2 * plane]);
        assert!(d.iter().any(|v| *v == 0.0));
        assert_eq!(p, perturb(&c, Perturbation::Block, 3).unwrap());
    }

    #[test]
    fn shape_and_metadata_kept() {
        let c = clip();
        for k in Perturbation::ALL {
            for level in 1..=5 {
                let p = perturb(&c, k, level).unwrap();
                assert_eq!(p.video.shape(), c.video.shape());
                assert_eq!((p.label, &p.method, &p.video_id), (c.label, &c.method, &c.video_id));
                assert!(p.video.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
