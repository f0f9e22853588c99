//! Sliding-window localization of temporal incoherence and heat-map
//! rendering to binary PPM.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, shape_err, Result};
use crate::eval::video_score;
use crate::model::Model;
use crate::synth::{mix, Clip, Label};
use crate::tensor::Tensor;

/// Fake probability per window position.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatMap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows·cols` cells in [0,1].
    pub cells: Vec<f64>,
    pub window: usize,
    pub stride: usize,
    /// Frame size (H, W) the windows were laid over.
    pub frame: [usize; 2],
    pub clip_id: String,
}

impl HeatMap {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells[i * self.cols + j]
    }

    /// First cell (row-major) holding the maximum.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (k, v) in self.cells.iter().enumerate() {
            if *v > self.cells[best] {
                best = k;
            }
        }
        (best / self.cols, best % self.cols)
    }

    /// Center of window (i, j) in continuous pixel coordinates, where pixel
    /// `y` spans `[y, y+1)`.
    pub fn window_center(&self, i: usize, j: usize) -> [f64; 2] {
        let half = self.window as f64 / 2.0;
        [(i * self.stride) as f64 + half, (j * self.stride) as f64 + half]
    }
}

/// Window `H/2` and stride `H/8` (at least 1) for an `H`-row frame.
pub fn default_geometry(h: usize) -> (usize, usize) {
    ((h / 2).max(1), (h / 8).max(1))
}

/// Grid size `floor((H−win)/stride)+1 × floor((W−win)/stride)+1`.
pub fn grid_dims(h: usize, w: usize, window: usize, stride: usize) -> Result<(usize, usize)> {
    if window == 0 || stride == 0 {
        return invalid("window and stride must be at least 1");
    }
    if window > h || window > w {
        return invalid(format!("window {window} larger than the {h}x{w} frame"));
    }
    Ok(((h - window) / stride + 1, (w - window) / stride + 1))
}

/// Copy of a `3×T×H×W` video with every pixel outside the `window`-sized
/// square at (y0, x0) set to zero in all frames and channels.
pub fn mask_outside(video: &Tensor<f32>, y0: usize, x0: usize, window: usize) -> Result<Tensor<f32>> {
    let s = video.shape();
    if s.len() != 4 {
        return shape_err(format!("expected a 3xTxHxW video, got {s:?}"));
    }
    let (h, w) = (s[2], s[3]);
    if y0 + window > h || x0 + window > w {
        return invalid(format!("window at ({y0},{x0}) of size {window} leaves the {h}x{w} frame"));
    }
    let mut out = Tensor::zeros(s.to_vec());
    let (src, dst) = (video.data(), out.data_mut());
    for (fi, frame) in src.chunks(h * w).enumerate() {
        for y in y0..y0 + window {
            let row = fi * h * w + y * w;
            dst[row + x0..row + x0 + window].copy_from_slice(&frame[y * w + x0..y * w + x0 + window]);
        }
    }
    Ok(out)
}

/// Scores the clip once per window position with everything outside the
/// window zeroed. Windows are evaluated in parallel; each cell depends only
/// on its own window, so the map does not depend on scheduling.
pub fn localize(model: &Model<f32>, clip: &Clip, window: usize, stride: usize) -> Result<HeatMap> {
    let [_, h, w] = clip.dims();
    let (rows, cols) = grid_dims(h, w, window, stride)?;
    let cells = (0..rows * cols)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / cols, k % cols);
            let masked = Clip {
                video: mask_outside(&clip.video, i * stride, j * stride, window)?,
                ..clip.clone()
            };
            video_score(model, &masked)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(HeatMap {
        rows,
        cols,
        cells,
        window,
        stride,
        frame: [h, w],
        clip_id: clip.video_id.clone(),
    })
}

/// Share of the artifact mass a masked fake must keep to stay fake.
pub const KEEP_FAKE: f64 = 0.75;
/// Below this share a masked fake is relabeled real; in between it is
/// dropped as ambiguous.
pub const DROP_FAKE: f64 = 0.25;

/// `count` copies of `clip` masked to random grid windows, for training a
/// model that will be queried on masked clips. `region` holds the
/// artifact weight of every pixel (`T×H×W`, e.g. from
/// [`crate::synth::region_weights`]) and is `None` for real clips, whose
/// copies stay real. A fake copy keeps its label when the window holds at
/// least [`KEEP_FAKE`] of the artifact mass, becomes real under
/// [`DROP_FAKE`], and is skipped otherwise.
pub fn masked_views(clip: &Clip, region: Option<&[f64]>, window: usize, stride: usize, count: usize, seed: u64) -> Result<Vec<Clip>> {
    let [t, h, w] = clip.dims();
    let (rows, cols) = grid_dims(h, w, window, stride)?;
    if let Some(r) = region {
        if r.len() != t * h * w {
            return shape_err(format!("region has {} weights for a {t}x{h}x{w} clip", r.len()));
        }
    }
    let total: f64 = region.map_or(0.0, |r| r.iter().sum());
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, clip.seed));
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (y0, x0) = (rng.gen_range(0..rows) * stride, rng.gen_range(0..cols) * stride);
        let mut view = Clip {
            video: mask_outside(&clip.video, y0, x0, window)?,
            ..clip.clone()
        };
        if let Some(r) = region {
            let inside: f64 = r
                .chunks(h * w)
                .map(|f| (y0..y0 + window).map(|y| f[y * w + x0..y * w + x0 + window].iter().sum::<f64>()).sum::<f64>())
                .sum();
            let share = if total > 0.0 { inside / total } else { 0.0 };
            if share < DROP_FAKE {
                view.label = Label::Real;
            } else if share < KEEP_FAKE {
                continue;
            }
        }
        out.push(view);
    }
    Ok(out)
}

/// 8-bit RGB image, row-major interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Rgb8 {
    /// Frame `t` of a `3×T×H×W` video in [0,1], rounded to 8 bits.
    pub fn from_frame(video: &Tensor<f32>, t: usize) -> Result<Self> {
        let s = video.shape();
        if s.len() != 4 || s[0] != 3 || t >= s[1] {
            return shape_err(format!("no frame {t} in video of shape {s:?}"));
        }
        let (frames, h, w) = (s[1], s[2], s[3]);
        let plane = h * w;
        let d = video.data();
        let mut data = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                data.push(to_u8(d[(c * frames + t) * plane + i] as f64));
            }
        }
        Ok(Rgb8 {
            width: w,
            height: h,
            data,
        })
    }

    /// Binary PPM bytes: `P6\n<w> <h>\n255\n` then the pixels.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Linear blue→red ramp: `v` maps to `(255v, 0, 255(1−v))`, rounded.
pub fn ramp(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    [to_u8(v), 0, to_u8(1.0 - v)]
}

/// Upsamples the map to its frame size, colors it with [`ramp`] and, given
/// a base frame, averages the two images channel-wise (rounding half up).
///
/// Each cell's value sits at its window center; pixels between centers are
/// interpolated bilinearly and pixels beyond the outermost centers take the
/// nearest edge value.
pub fn heatmap_image(map: &HeatMap, base: Option<&Rgb8>) -> Result<Rgb8> {
    let [h, w] = map.frame;
    if map.cells.len() != map.rows * map.cols || map.rows == 0 || map.cols == 0 {
        return shape_err(format!("heat map has {} cells for a {}x{} grid", map.cells.len(), map.rows, map.cols));
    }
    if let Some(b) = base {
        if (b.height, b.width) != (h, w) || b.data.len() != 3 * h * w {
            return shape_err(format!("base frame {}x{} does not match the {h}x{w} heat map", b.height, b.width));
        }
    }
    let coord = |p: usize, n: usize| -> (usize, usize, f64) {
        let c = ((p as f64 + 0.5 - map.window as f64 / 2.0) / map.stride as f64).clamp(0.0, (n - 1) as f64);
        let i0 = c.floor() as usize;
        (i0, (i0 + 1).min(n - 1), c - i0 as f64)
    };
    let mut data = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        let (i0, i1, fy) = coord(y, map.rows);
        for x in 0..w {
            let (j0, j1, fx) = coord(x, map.cols);
            let top = map.get(i0, j0) + fx * (map.get(i0, j1) - map.get(i0, j0));
            let bot = map.get(i1, j0) + fx * (map.get(i1, j1) - map.get(i1, j0));
            let color = ramp(top + fy * (bot - top));
            match base {
                None => data.extend_from_slice(&color),
                Some(b) => {
                    let k = 3 * (y * w + x);
                    for c in 0..3 {
                        data.push((color[c] as u16 + b.data[k + c] as u16).div_ceil(2) as u8);
                    }
                }
            }
        }
    }
    Ok(Rgb8 {
        width: w,
        height: h,
        data,
    })
}

/// Writes [`heatmap_image`] as a binary PPM.
pub fn render_heatmap(map: &HeatMap, base: Option<&Rgb8>, out: impl AsRef<Path>) -> Result<()> {
    fs::write(out, heatmap_image(map, base)?.to_ppm())?;
    Ok(())
}
