//! Synthetic labeled clips: coherent "real" scenes, fakes carrying either
//! temporal incoherence (flicker) or spatial artifacts (blend), robustness
//! perturbations and dataset manifests.

mod manifest;
mod perturb;
mod scene;

pub use manifest::{
    build_manifest, generate, load_clips, loo_rows, read_manifest, render_row, write_manifest, DataSpec, ManifestRow, Split,
    GENERATOR_VERSION,
};
pub use perturb::{perturb, Perturbation};
pub use scene::{gen_fake, gen_real, region_weights, SceneParams};

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn value(self) -> u8 {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn from_value(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Real),
            1 => Ok(Label::Fake),
            _ => invalid(format!("label must be 0 or 1, got {v}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Independent per-frame noise: neighborhood incoherence.
    FlickerA,
    /// A mark that appears abruptly and fades out: long-range incoherence.
    FlickerB,
    /// A bright ring at the patch boundary, constant over time.
    BlendA,
    /// A checkerboard overlay on the patch, constant over time.
    BlendB,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::FlickerA, Method::FlickerB, Method::BlendA, Method::BlendB];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::FlickerA => "flickerA",
            Method::FlickerB => "flickerB",
            Method::BlendA => "blendA",
            Method::BlendB => "blendB",
        }
    }

    pub fn is_temporal(self) -> bool {
        matches!(self, Method::FlickerA | Method::FlickerB)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .map_or_else(|| invalid(format!("unknown method `{s}`")), Ok)
    }
}

/// A video 3×T×H×W with values in [0,1] and its metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub video: Tensor<f32>,
    pub label: Label,
    /// `real` or the fake method.
    pub method: String,
    pub video_id: String,
    pub seed: u64,
}

impl Clip {
    /// `[T, H, W]` of the video.
    pub fn dims(&self) -> [usize; 3] {
        let s = self.video.shape();
        [s[1], s[2], s[3]]
    }

    /// Frames `[start, start+len)` as a 3×len×H×W tensor.
    pub fn window(&self, start: usize, len: usize) -> Result<Tensor<f32>> {
        let [t, h, w] = self.dims();
        if len == 0 || start + len > t {
            return invalid(format!("window {start}..{} outside a {t}-frame video", start + len));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(3 * len * plane);
        for c in 0..3 {
            let base = (c * t + start) * plane;
            data.extend_from_slice(&self.video.data()[base..base + len * plane]);
        }
        Tensor::new(vec![3, len, h, w], data)
    }
}

/// Stable 64-bit mix used to derive per-clip seeds.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Threshold of [`temporal_variation`] on the luminance scale.
pub const JUMP_THRESHOLD: f64 = 0.2;

/// Hand-coded temporal variation statistic of a video 3×T×H×W: the
/// fraction of pixel transitions whose luminance change differs from the
/// mean change of its 5×5 neighborhood by more than [`JUMP_THRESHOLD`].
///
/// Subtracting the neighborhood mean cancels changes that are uniform over
/// an area, such as a brightness shift of a whole region; smooth motion of
/// smooth textures stays under the threshold.
pub fn temporal_variation(video: &Tensor<f32>) -> f64 {
    let s = video.shape();
    let (t, h, w) = (s[1], s[2], s[3]);
    if t < 2 {
        return 0.0;
    }
    let plane = h * w;
    let d = video.data();
    let n = t * plane;
    let luma: Vec<f64> = (0..n)
        .map(|i| 0.299 * d[i] as f64 + 0.587 * d[n + i] as f64 + 0.114 * d[2 * n + i] as f64)
        .collect();
    let mut jumps = 0usize;
    let mut diff = vec![0.0; plane];
    for ti in 0..t - 1 {
        for (i, v) in diff.iter_mut().enumerate() {
            *v = luma[(ti + 1) * plane + i] - luma[ti * plane + i];
        }
        for y in 0..h {
            for x in 0..w {
                let (mut sum, mut count) = (0.0, 0.0);
                for yy in y.saturating_sub(2)..(y + 3).min(h) {
                    for xx in x.saturating_sub(2)..(x + 3).min(w) {
                        sum += diff[yy * w + xx];
                        count += 1.0;
                    }
                }
                if (diff[y * w + x] - sum / count).abs() > JUMP_THRESHOLD {
                    jumps += 1;
                }
            }
        }
    }
    jumps as f64 / ((t - 1) * plane) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn methods_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("deepfake".parse::<Method>().is_err());
    }

    #[test]
    fn window_slices_frames() {
        let video = Tensor::from_fn(vec![3, 4, 1, 2], |i| i as f32);
        let clip = Clip {
            video,
            label: Label::Real,
            method: "real".into(),
            video_id: "v".into(),
            seed: 0,
        };
        let w = clip.window(1, 2).unwrap();
        assert_eq!(w.shape(), &[3, 2, 1, 2]);
        assert_eq!(&w.data()[..4], &[2.0, 3.0, 4.0, 5.0]);
        assert_eq!(&w.data()[4..8], &[10.0, 11.0, 12.0, 13.0]);
        assert!(clip.window(3, 2).is_err());
    }
}
