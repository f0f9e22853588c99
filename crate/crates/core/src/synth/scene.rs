use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Clip, Label, Method};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Width of the soft edge of the foreground ellipse, in units of its radius.
const EDGE: f64 = 0.15;
/// Peak contrast of the flickerB mark relative to the strength.
const MARK_GAIN: f64 = 2.0;
/// Radius (std) of the flickerB mark in pixels.
const MARK_SIGMA: f64 = 1.0;

/// A moving textured foreground patch over a static textured background.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    /// Seeds both textures and, for fakes, the artifact stream.
    pub seed: u64,
    /// Trajectory amplitude in pixels, (y, x).
    pub amplitude: [f64; 2],
    /// Trajectory frequency in cycles per frame.
    pub frequency: f64,
    /// Trajectory phase in radians, (y, x).
    pub phase: [f64; 2],
    /// Rest position of the patch center in pixels, (y, x).
    pub center: [f64; 2],
    /// Diameters of the foreground ellipse, (h, w).
    pub size: [f64; 2],
    /// Upper bound on the per-frame displacement of the patch, per axis.
    pub max_step: f64,
}

impl SceneParams {
    /// Random scene for an `h`×`w` frame, fully determined by `seed`.
    pub fn random(seed: u64, h: usize, w: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (hf, wf) = (h as f64, w as f64);
        let side = hf.min(wf);
        let size = [rng.gen_range(0.35..0.55) * side, rng.gen_range(0.35..0.55) * side];
        let frequency = rng.gen_range(0.02..0.06);
        let speed = rng.gen_range(0.1..1.4);
        let room = 0.5 * side - size[0].max(size[1]) / 2.0 - 1.0;
        let amp = (speed / (2.0 * PI * frequency)).min(room.max(0.0));
        let theta = rng.gen_range(0.0..PI);
        let amplitude = [amp * theta.sin().abs(), amp * theta.cos().abs()];
        let phase = [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)];
        let reach = |ax: usize, extent: f64| size[ax] / 2.0 + amplitude[ax] + 0.5 - extent / 2.0;
        let center = [
            hf / 2.0 + rng.gen_range(-1.0..=1.0) * (-reach(0, hf)).max(0.0),
            wf / 2.0 + rng.gen_range(-1.0..=1.0) * (-reach(1, wf)).max(0.0),
        ];
        SceneParams {
            seed,
            amplitude,
            frequency,
            phase,
            center,
            size,
            max_step: 1.5,
        }
    }

    /// Random scene whose foreground region never leaves quadrant `q` of an
    /// `h`×`w` frame (0 top-left, 1 top-right, 2 bottom-left, 3
    /// bottom-right). The patch spans 0.3 of the shorter side.
    pub fn in_quadrant(seed: u64, h: usize, w: usize, q: usize) -> Result<Self> {
        if q > 3 {
            return invalid(format!("quadrant must be 0..=3, got {q}"));
        }
        let mut s = SceneParams::random(seed, h, w);
        let d = 0.3 * (h.min(w) as f64);
        s.size = [d, d];
        let half = [h as f64 / 4.0, w as f64 / 4.0];
        for ax in 0..2 {
            s.amplitude[ax] = s.amplitude[ax].min((half[ax] - d / 2.0 - 0.5).max(0.0));
        }
        s.center = [half[0] * (1 + 2 * (q / 2)) as f64, half[1] * (1 + 2 * (q % 2)) as f64];
        s.validate(h, w)?;
        Ok(s)
    }

    /// Patch center at frame `t`.
    pub fn position(&self, t: usize) -> [f64; 2] {
        let arg = 2.0 * PI * self.frequency * t as f64;
        [
            self.center[0] + self.amplitude[0] * (arg + self.phase[0]).sin(),
            self.center[1] + self.amplitude[1] * (arg + self.phase[1]).sin(),
        ]
    }

    /// Checks the trajectory bound and that the patch stays inside an
    /// `h`×`w` frame at every phase of its motion.
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        let step = 2.0 * PI * self.frequency * self.amplitude[0].max(self.amplitude[1]);
        if step > self.max_step {
            return invalid(format!(
                "trajectory moves up to {step:.3} px per frame, above the bound {}",
                self.max_step
            ));
        }
        if self.size.iter().any(|s| *s <= 0.0) || self.amplitude.iter().any(|a| *a < 0.0) {
            return invalid("foreground size must be positive and amplitude non-negative");
        }
        for (ax, extent) in [(0, h as f64), (1, w as f64)] {
            let half = self.size[ax] / 2.0 + self.amplitude[ax];
            if self.center[ax] - half < 0.0 || self.center[ax] + half > extent {
                return invalid(format!(
                    "foreground region leaves the {}x{} frame along axis {}",
                    h,
                    w,
                    ["y", "x"][ax]
                ));
            }
        }
        Ok(())
    }

    /// Normalized elliptical radius of pixel (y, x) at frame `t`, with its
    /// patch coordinates.
    fn local(&self, t: usize, y: usize, x: usize) -> (f64, f64, f64) {
        self.local_at(self.position(t), y, x)
    }

    /// Like `local`, relative to the rest position.
    fn rest_local(&self, y: usize, x: usize) -> (f64, f64, f64) {
        self.local_at(self.center, y, x)
    }

    fn local_at(&self, [cy, cx]: [f64; 2], y: usize, x: usize) -> (f64, f64, f64) {
        let (u, v) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
        let rho = ((u / (self.size[0] / 2.0)).powi(2) + (v / (self.size[1] / 2.0)).powi(2)).sqrt();
        (rho, u, v)
    }
}

/// Foreground weight in [0,1] at normalized radius `rho`: 1 inside, 0
/// outside, smoothstep across the edge band.
fn alpha(rho: f64) -> f64 {
    let s = ((1.0 + EDGE / 2.0 - rho) / EDGE).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Sum of a few plane waves per channel over a base color.
struct Texture {
    base: [f64; 3],
    waves: Vec<[f64; 5]>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, freq: (f64, f64), amp: (f64, f64), waves: usize) -> Self {
        let base = [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)];
        let waves = (0..3 * waves)
            .map(|_| {
                let f = rng.gen_range(freq.0..freq.1);
                let theta = rng.gen_range(0.0..PI);
                [f * theta.sin(), f * theta.cos(), rng.gen_range(0.0..2.0 * PI), rng.gen_range(amp.0..amp.1), 0.0]
            })
            .collect();
        Texture { base, waves }
    }

    fn eval(&self, c: usize, y: f64, x: f64) -> f64 {
        let per = self.waves.len() / 3;
        self.base[c]
            + self.waves[c * per..(c + 1) * per]
                .iter()
                .map(|w| w[3] * (w[0] * y + w[1] * x + w[2]).sin())
                .sum::<f64>()
    }
}

fn textures(seed: u64) -> (Texture, Texture) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7465_7874_7572_6573);
    let bg = Texture::random(&mut rng, (0.2, 0.9), (0.02, 0.06), 4);
    let fg = Texture::random(&mut rng, (0.15, 0.6), (0.02, 0.08), 3);
    (bg, fg)
}

/// Arguments of the artifact closure: frame, row, column, foreground weight,
/// and the pixel's normalized radius and (u, v) offset from the patch center.
type Extra<'a> = dyn FnMut(usize, usize, usize, f64, f64, f64, f64) -> f64 + 'a;

fn render(scene: &SceneParams, t: usize, h: usize, w: usize, extra: &mut Extra<'_>) -> Vec<f64> {
    let (bg, fg) = textures(scene.seed);
    let plane = h * w;
    let mut data = vec![0.0; 3 * t * plane];
    for ti in 0..t {
        for y in 0..h {
            for x in 0..w {
                let (rho, u, v) = scene.local(ti, y, x);
                let a = alpha(rho);
                let add = extra(ti, y, x, a, rho, u, v);
                for c in 0..3 {
                    let back = bg.eval(c, y as f64 + 0.5, x as f64 + 0.5);
                    let front = fg.eval(c, u, v);
                    data[(c * t + ti) * plane + y * w + x] = back + a * (front - back) + add;
                }
            }
        }
    }
    data
}

fn into_clip(data: Vec<f64>, t: usize, h: usize, w: usize, label: Label, method: &str, scene: &SceneParams) -> Clip {
    let video = Tensor::new(vec![3, t, h, w], data.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect())
        .expect("render produces 3·T·H·W values");
    Clip {
        video,
        label,
        method: method.to_string(),
        video_id: String::new(),
        seed: scene.seed,
    }
}

/// Renders a coherent real clip 3×T×H×W. The background is static, so its
/// frame-to-frame difference is exactly zero.
pub fn gen_real(scene: &SceneParams, t: usize, h: usize, w: usize) -> Result<Clip> {
    if t == 0 || h == 0 || w == 0 {
        return invalid(format!("clip size {t}x{h}x{w} has an empty axis"));
    }
    scene.validate(h, w)?;
    let data = render(scene, t, h, w, &mut |_, _, _, _, _, _, _| 0.0);
    Ok(into_clip(data, t, h, w, Label::Real, "real", scene))
}

/// Renders the real clip of `scene` with `method`'s artifact injected in the
/// foreground region, plus a per-frame brightness jitter of amplitude
/// `strength/4` shared by all methods.
///
/// Flicker artifacts follow the moving patch. Blend overlays are fixed in
/// frame coordinates over the patch's rest position, so they add no
/// temporal change of their own.
pub fn gen_fake(scene: &SceneParams, method: Method, strength: f64, t: usize, h: usize, w: usize) -> Result<Clip> {
    if !(strength > 0.0) {
        return invalid(format!("strength must be positive, got {strength}"));
    }
    if t == 0 || h == 0 || w == 0 {
        return invalid(format!("clip size {t}x{h}x{w} has an empty axis"));
    }
    scene.validate(h, w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x6172_7469_6661_6374);
    rng.set_stream(method as u64 + 1);
    let jitter: Vec<f64> = (0..t).map(|_| rng.gen_range(-0.25..=0.25) * strength).collect();
    let s = strength;
    let data = match method {
        Method::FlickerA => {
            let noise: Vec<f64> = (0..t * h * w).map(|_| rng.gen_range(-1.0..=1.0) * s).collect();
            render(scene, t, h, w, &mut |ti, y, x, a, _, _, _| a * (jitter[ti] + noise[(ti * h + y) * w + x]))
        }
        Method::FlickerB => {
            let r = 0.5 * scene.size[0].min(scene.size[1]) / 2.0;
            let (mu, mv) = (rng.gen_range(-r..=r), rng.gen_range(-r..=r));
            let onset = if t > 1 { rng.gen_range(t / 4..=t / 2) } else { 0 };
            let envelope = |ti: usize| -> f64 {
                if ti < onset {
                    0.0
                } else if t - 1 == onset {
                    1.0
                } else {
                    (t - 1 - ti) as f64 / (t - 1 - onset) as f64
                }
            };
            // dark mark on bright skin, bright mark on dark skin
            let base = textures(scene.seed).1.base;
            let sign = if 0.299 * base[0] + 0.587 * base[1] + 0.114 * base[2] > 0.5 { -1.0 } else { 1.0 };
            render(scene, t, h, w, &mut |ti, _, _, a, _, u, v| {
                let d2 = (u - mu).powi(2) + (v - mv).powi(2);
                a * (jitter[ti] + sign * MARK_GAIN * s * envelope(ti) * (-d2 / (2.0 * MARK_SIGMA * MARK_SIGMA)).exp())
            })
        }
        Method::BlendA => render(scene, t, h, w, &mut |ti, y, x, a, _, _, _| {
            let (rho, _, _) = scene.rest_local(y, x);
            a * jitter[ti] + alpha(rho) * s * (-((rho - 0.8) / 0.15).powi(2)).exp()
        }),
        Method::BlendB => render(scene, t, h, w, &mut |ti, y, x, a, _, _, _| {
            let (rho, _, _) = scene.rest_local(y, x);
            let check = if (y / 2 + x / 2) % 2 == 0 { 0.5 } else { -0.5 };
            a * jitter[ti] + alpha(rho) * s * check
        }),
    };
    Ok(into_clip(data, t, h, w, Label::Fake, method.as_str(), scene))
}

/// Foreground weight of every pixel at every frame, `T×H×W`.
pub fn region_weights(scene: &SceneParams, t: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(t * h * w);
    for ti in 0..t {
        for y in 0..h {
            for x in 0..w {
                out.push(alpha(scene.local(ti, y, x).0));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still(seed: u64) -> SceneParams {
        let mut s = SceneParams::random(seed, 32, 32);
        s.amplitude = [0.0, 0.0];
        s
    }

    #[test]
    fn zero_motion_gives_identical_frames() {
        let c = gen_real(&still(4), 6, 32, 32).unwrap();
        let d = c.video.data();
        let plane = 32 * 32;
        for ch in 0..3 {
            for t in 1..6 {
                let a = &d[(ch * 6) * plane..(ch * 6 + 1) * plane];
                let b = &d[(ch * 6 + t) * plane..(ch * 6 + t + 1) * plane];
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn background_is_static() {
        let scene = SceneParams::random(9, 32, 32);
        let c = gen_real(&scene, 16, 32, 32).unwrap();
        let wts = region_weights(&scene, 16, 32, 32);
        let plane = 32 * 32;
        let mut checked = 0;
        for p in 0..plane {
            if (0..16).all(|t| wts[t * plane + p] == 0.0) {
                for ch in 0..3 {
                    let base = ch * 16 * plane + p;
                    for t in 1..16 {
                        assert_eq!(c.video.data()[base + t * plane], c.video.data()[base]);
                    }
                }
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn deterministic() {
        let s = SceneParams::random(21, 32, 32);
        assert_eq!(gen_real(&s, 8, 32, 32).unwrap().video, gen_real(&s, 8, 32, 32).unwrap().video);
        let a = gen_fake(&s, Method::FlickerB, 0.3, 8, 32, 32).unwrap();
        let b = gen_fake(&s, Method::FlickerB, 0.3, 8, 32, 32).unwrap();
        assert_eq!(a.video, b.video);
    }

    #[test]
    fn patch_outside_frame_rejected() {
        let mut s = SceneParams::random(1, 32, 32);
        s.center = [2.0, 16.0];
        assert!(gen_real(&s, 4, 32, 32).is_err());
    }

    #[test]
    fn fast_trajectory_rejected() {
        let mut s = SceneParams::random(1, 32, 32);
        s.amplitude = [2.0, 2.0];
        s.frequency = 0.5;
        assert!(s.validate(32, 32).is_err());
    }

    #[test]
    fn weak_artifact_converges_to_real() {
        let s = SceneParams::random(3, 32, 32);
        let real = gen_real(&s, 8, 32, 32).unwrap();
        for m in Method::ALL {
            let strength = 1e-4;
            let fake = gen_fake(&s, m, strength, 8, 32, 32).unwrap();
            assert!(fake.video.max_abs_diff(&real.video) as f64 <= (MARK_GAIN + 0.25) * strength + 1e-6, "{m}");
        }
    }

    #[test]
    fn bad_strength_rejected() {
        let s = SceneParams::random(3, 32, 32);
        assert!(gen_fake(&s, Method::BlendA, 0.0, 4, 32, 32).is_err());
        assert!(gen_fake(&s, Method::BlendA, f64::NAN, 4, 32, 32).is_err());
    }

    #[test]
    fn values_in_unit_range() {
        let s = SceneParams::random(11, 32, 32);
        for m in Method::ALL {
            let c = gen_fake(&s, m, 1.0, 8, 32, 32).unwrap();
            assert!(c.video.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    /// Mean absolute frame difference over pixels selected by `keep`.
    fn mean_temporal_diff(c: &Clip, keep: impl Fn(usize, usize, usize) -> bool) -> f64 {
        let [t, h, w] = c.dims();
        let d = c.video.data();
        let (mut sum, mut n) = (0.0, 0usize);
        for ch in 0..3 {
            for ti in 0..t - 1 {
                for y in 0..h {
                    for x in 0..w {
                        if keep(ti, y, x) {
                            let i = ((ch * t + ti) * h + y) * w + x;
                            sum += (d[i + h * w] - d[i]).abs() as f64;
                            n += 1;
                        }
                    }
                }
            }
        }
        sum / n.max(1) as f64
    }

    #[test]
    fn flicker_concentrates_in_region() {
        let s = SceneParams::random(21, 32, 32);
        let c = gen_fake(&s, Method::FlickerA, 0.2, 16, 32, 32).unwrap();
        let a = region_weights(&s, 16, 32, 32);
        let at = |ti: usize, y: usize, x: usize| a[(ti * 32 + y) * 32 + x].min(a[((ti + 1) * 32 + y) * 32 + x]);
        let inside = mean_temporal_diff(&c, |ti, y, x| at(ti, y, x) > 0.99);
        let outside = mean_temporal_diff(&c, |ti, y, x| at(ti, y, x) == 0.0 && a[((ti + 1) * 32 + y) * 32 + x] == 0.0);
        assert!(inside > 5.0 * outside.max(1e-6), "{inside} vs {outside}");
    }

    #[test]
    fn blend_ring_is_static_and_sharp() {
        let s = still(5);
        let strength = 0.3;
        let fake = gen_fake(&s, Method::BlendA, strength, 8, 32, 32).unwrap();
        let real = gen_real(&s, 8, 32, 32).unwrap();
        let ring = |y: usize, x: usize| (s.rest_local(y, x).0 - 0.8).abs() < 0.1;
        // with the patch at rest, only the shared jitter moves the ring
        let moving = mean_temporal_diff(&fake, |_, y, x| ring(y, x));
        // two jitter draws differ by at most strength/2
        assert!(moving <= strength / 2.0 + 1e-6, "{moving}");
        // the ring raises the spatial gradient over the real clip
        let grad = |c: &Clip| {
            let d = c.video.data();
            let (mut g, mut n) = (0.0, 0);
            for y in 1..31 {
                for x in 1..31 {
                    if ring(y, x) {
                        g += ((d[y * 32 + x + 1] - d[y * 32 + x - 1]).abs() + (d[(y + 1) * 32 + x] - d[(y - 1) * 32 + x]).abs()) as f64;
                        n += 1;
                    }
                }
            }
            g / n as f64
        };
        assert!(grad(&fake) > grad(&real), "{} vs {}", grad(&fake), grad(&real));
    }

    #[test]
    fn statistic_separates_temporal_methods_only() {
        use crate::eval::auc;
        use crate::synth::temporal_variation;
        let n = 50;
        let reals: Vec<f64> = (0..n)
            .map(|i| temporal_variation(&gen_real(&SceneParams::random(1000 + i, 32, 32), 16, 32, 32).unwrap().video))
            .collect();
        for m in Method::ALL {
            let fakes: Vec<f64> = (0..n)
                .map(|i| temporal_variation(&gen_fake(&SceneParams::random(2000 + i, 32, 32), m, 0.3, 16, 32, 32).unwrap().video))
                .collect();
            let scores: Vec<f64> = reals.iter().chain(&fakes).copied().collect();
            let labels: Vec<u8> = (0..2 * n).map(|i| (i >= n) as u8).collect();
            let a = auc(&scores, &labels).unwrap();
            if m.is_temporal() {
                assert!(a > 0.95, "{m}: {a}");
            } else {
                assert!(a < 0.7, "{m}: {a}");
            }
        }
    }

    #[test]
    fn quadrant_scene_stays_in_quadrant() {
        for q in 0..4 {
            let s = SceneParams::in_quadrant(40 + q as u64, 32, 32, q).unwrap();
            let a = region_weights(&s, 16, 32, 32);
            for (k, v) in a.iter().enumerate() {
                if *v > 0.0 {
                    let (y, x) = ((k / 32) % 32, k % 32);
                    assert_eq!((y / 16) * 2 + x / 16, q, "pixel ({y},{x})");
                }
            }
        }
        assert!(SceneParams::in_quadrant(1, 32, 32, 4).is_err());
    }
}
