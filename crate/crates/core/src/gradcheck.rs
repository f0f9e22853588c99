//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::model::{encoder_block, multi_head_attention, BlockVars, TransformerConfig};
use crate::ops::{Activation, Conv3dGeometry, PoolGeometry};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many entries per parameter (sampled by `seed`).
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            tolerance: 1e-4,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    /// True iff every checked parameter is below tolerance (vacuously true
    /// when there are no parameters).
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences for every parameter in `params`.
pub fn finite_diff_check<F>(f: F, params: &ParamStore<f64>, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    let grads = tape.backward(loss)?;

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, store)?;
        Ok(t.value(l).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut report = Vec::new();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let analytic = grads.param(&name).cloned().unwrap_or_else(|| {
            crate::tensor::Tensor::zeros(params.get(&name).unwrap().shape().to_vec())
        });
        let n = analytic.len();
        let indices: Vec<usize> = match opts.max_entries {
            Some(m) if m < n => {
                let mut v = sample(&mut rng, n, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let mut worst: f64 = 0.0;
        for &i in &indices {
            let orig = work.get(&name)?.data()[i];
            work.get_mut(&name).unwrap().data_mut()[i] = orig + opts.step;
            let plus = eval(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig - opts.step;
            let minus = eval(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
        report.push(ParamCheck {
            name,
            entries_checked: indices.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        params: report,
        tolerance: opts.tolerance,
    })
}

/// Operations covered by [`suite`].
pub const SUITE_OPS: [&str; 10] = [
    "conv3d",
    "linear",
    "batch_norm",
    "layer_norm",
    "gelu",
    "softmax",
    "multi_head_attention",
    "encoder_block",
    "bce_loss",
    "maxpool3d",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteCase {
    pub op: &'static str,
    /// Human-readable input shape.
    pub shape: String,
    pub report: GradCheckReport,
}

fn randn(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let normal = StandardNormal;
    Tensor::from_fn(shape, |_| rng.sample::<f64, _>(normal))
}

/// Builds the loss `Σ y ⊙ R` for a fixed random `R`, so every output entry
/// carries a distinct weight.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = randn(&mut rng, tape.shape(y).to_vec());
    let r = tape.input(r);
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

fn block_params(rng: &mut ChaCha8Rng, p: &mut ParamStore<f64>, d: usize, inner: usize, m: usize) {
    let mut put = |name: &str, shape: Vec<usize>, scale: f64, offset: f64| {
        let t = randn(rng, shape).map(|v| offset + scale * v);
        p.insert(format!("tt.block0.{name}"), t);
    };
    put("ln1.gain", vec![d], 0.2, 1.0);
    put("ln1.shift", vec![d], 0.2, 0.0);
    put("attn.q.weight", vec![inner, d], 0.5, 0.0);
    put("attn.k.weight", vec![inner, d], 0.5, 0.0);
    put("attn.v.weight", vec![inner, d], 0.5, 0.0);
    put("attn.out.weight", vec![d, inner], 0.5, 0.0);
    put("attn.out.bias", vec![d], 0.2, 0.0);
    put("ln2.gain", vec![d], 0.2, 1.0);
    put("ln2.shift", vec![d], 0.2, 0.0);
    put("mlp.fc1.weight", vec![m, d], 0.5, 0.0);
    put("mlp.fc1.bias", vec![m], 0.2, 0.0);
    put("mlp.fc2.weight", vec![d, m], 0.5, 0.0);
    put("mlp.fc2.bias", vec![d], 0.2, 0.0);
}

/// Finite-difference checks of every differentiable operation on
/// `shapes` random shapes each, with inputs treated as parameters so
/// their gradients are checked too. Entries per tensor are capped at 64.
pub fn suite(seed: u64, shapes: usize, opts: GradCheckOptions) -> Result<Vec<SuiteCase>> {
    let mut out = Vec::new();
    let opts = GradCheckOptions {
        max_entries: opts.max_entries.or(Some(64)),
        ..opts
    };
    for (oi, op) in SUITE_OPS.into_iter().enumerate() {
        for k in 0..shapes {
            let case_seed = seed ^ ((oi as u64) << 32) ^ k as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
            let mut p = ParamStore::new();
            let proj = case_seed.wrapping_add(1);
            let (shape, report) = match op {
                "conv3d" => {
                    let (n, ci, co) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
                    let dims = [rng.gen_range(2..5), rng.gen_range(2..6), rng.gen_range(2..6)];
                    let kernel = [rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4)];
                    let stride = [rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(1..3)];
                    let geom = Conv3dGeometry::new(stride, [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2]);
                    p.insert("x", randn(&mut rng, vec![n, ci, dims[0], dims[1], dims[2]]));
                    p.insert("w", randn(&mut rng, vec![co, ci, kernel[0], kernel[1], kernel[2]]));
                    p.insert("b", randn(&mut rng, vec![co]));
                    let shape = format!("x {n}x{ci}x{}x{}x{} k {kernel:?} s {stride:?} cout {co}", dims[0], dims[1], dims[2]);
                    let f = |t: &mut Tape<f64>, s: &ParamStore<f64>| {
                        let (x, w, b) = (s.bind(t, "x")?, s.bind(t, "w")?, s.bind(t, "b")?);
                        let y = t.conv3d(x, w, Some(b), geom)?;
                        project(t, y, proj)
                    };
                    (shape, finite_diff_check(f, &p, opts)?)
                }
                "linear" => {
                    let (b, s, din, dout) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..7), rng.gen_range(1..7));
                    p.insert("x", randn(&mut rng, vec![b, s, din]));
                    p.insert("w", randn(&mut rng, vec![dout, din]));
                    p.insert("b", randn(&mut rng, vec![dout]));
                    let f = |t: &mut Tape<f64>, st: &ParamStore<f64>| {
                        let (x, w, bb) = (st.bind(t, "x")?, st.bind(t, "w")?, st.bind(t, "b")?);
                        let y = t.linear(x, w, Some(bb))?;
                        project(t, y, proj)
                    };
                    (format!("x {b}x{s}x{din} out {dout}"), finite_diff_check(f, &p, opts)?)
                }
                "batch_norm" => {
                    let (n, c, d) = (rng.gen_range(2..4), rng.gen_range(1..4), rng.gen_range(2..5));
                    p.insert("x", randn(&mut rng, vec![n, c, d, 2, 2]));
                    p.insert("g", randn(&mut rng, vec![c]).map(|v| 1.0 + 0.2 * v));
                    p.insert("b", randn(&mut rng, vec![c]));
                    let f = |t: &mut Tape<f64>, st: &ParamStore<f64>| {
                        let (x, g, b) = (st.bind(t, "x")?, st.bind(t, "g")?, st.bind(t, "b")?);
                        let (y, _) = t.batch_norm(x, g, b, 1e-5, None)?;
                        project(t, y, proj)
                    };
                    (format!("x {n}x{c}x{d}x2x2"), finite_diff_check(f, &p, opts)?)
                }
                "layer_norm" => {
                    let (r, d) = (rng.gen_range(1..5), rng.gen_range(2..9));
                    p.insert("x", randn(&mut rng, vec![r, d]));
                    p.insert("g", randn(&mut rng, vec![d]).map(|v| 1.0 + 0.2 * v));
                    p.insert("b", randn(&mut rng, vec![d]));
                    let f = |t: &mut Tape<f64>, st: &ParamStore<f64>| {
                        let (x, g, b) = (st.bind(t, "x")?, st.bind(t, "g")?, st.bind(t, "b")?);
                        let y = t.layer_norm(x, g, b, 1e-5)?;
                        project(t, y, proj)
                    };
                    (format!("x {r}x{d}"), finite_diff_check(f, &p, opts)?)
                }
                "gelu" | "softmax" => {
                    let (r, d) = (rng.gen_range(1..5), rng.gen_range(2..9));
                    p.insert("x", randn(&mut rng, vec![r, d]).map(|v| 2.0 * v));
                    let f = |t: &mut Tape<f64>, st: &ParamStore<f64>| {
                        let x = st.bind(t, "x")?;
                        let y = if op == "gelu" { t.activation(x, Activation::Gelu) } else { t.softmax(x)? };
                        project(t, y, proj)
                    };
                    (format!("x {r}x{d}"), finite_diff_check(f, &p, opts)?)
                }
                "multi_head_attention" | "encoder_block" => {
                    let (b, s, heads, hd) = (rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(1..3), rng.gen_range(1..4));
                    let d = rng.gen_range(2..6);
                    let m = rng.gen_range(2..7);
                    let cfg = TransformerConfig {
                        layers: 1,
                        dim: d,
                        heads,
                        head_dim: hd,
                        mlp_dim: m,
                        tokens: s,
                        feature_dim: d,
                    };
                    p.insert("x", randn(&mut rng, vec![b, s, d]));
                    block_params(&mut rng, &mut p, d, heads * hd, m);
                    let f = |t: &mut Tape<f64>, st: &ParamStore<f64>| {
                        let x = st.bind(t, "x")?;
                        let names: Vec<String> = st.names().cloned().collect();
                        let mut vars = std::collections::BTreeMap::new();
                        for name in &names {
                            if name != "x" {
                                vars.insert(name.clone(), st.bind(t, name)?);
                            }
                        }
                        let w = BlockVars::bind(&|n: &str| vars.get(n).copied().ok_or_else(|| crate::Error::InvalidArgument(n.into())), 0)?;
                        let y = if op == "encoder_block" {
                            encoder_block(t, x, &w, &cfg)?
                        } else {
                            multi_head_attention(t, x, &w, heads, hd)?
                        };
                        project(t, y, proj)
                    };
                    (format!("x {b}x{s}x{d} heads {heads}x{hd} mlp {m}"), finite_diff_check(f, &p, opts)?)
                }
                "bce_loss" => {
                    let n = rng.gen_range(1..9);
                    p.insert("z", randn(&mut rng, vec![n]).map(|v| 3.0 * v));
                    let labels: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
                    let f = |t: &mut Tape<f64>, st: &ParamStore<f64>| {
                        let z = st.bind(t, "z")?;
                        t.bce_with_logits(z, &labels)
                    };
                    (format!("logits {n}"), finite_diff_check(f, &p, opts)?)
                }
                _ => {
                    // distinct values keep every window's maximum unique,
                    // away from the kink
                    let dims = [rng.gen_range(2..5), rng.gen_range(3..7), rng.gen_range(3..7)];
                    let len = 2 * dims[0] * dims[1] * dims[2];
                    let mut vals: Vec<f64> = (0..len).map(|i| i as f64 * 0.37).collect();
                    vals.shuffle(&mut rng);
                    p.insert("x", Tensor::new(vec![1, 2, dims[0], dims[1], dims[2]], vals)?);
                    let geom = PoolGeometry::new([1, 3, 3], [1, 2, 2], [0, 1, 1]);
                    let f = |t: &mut Tape<f64>, st: &ParamStore<f64>| {
                        let x = st.bind(t, "x")?;
                        let y = t.maxpool3d(x, geom)?;
                        project(t, y, proj)
                    };
                    (format!("x 1x2x{}x{}x{}", dims[0], dims[1], dims[2]), finite_diff_check(f, &p, opts)?)
                }
            };
            out.push(SuiteCase { op, shape, report });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_on_two_shapes() {
        let cases = suite(11, 2, GradCheckOptions::default()).unwrap();
        assert_eq!(cases.len(), 2 * SUITE_OPS.len());
        for c in &cases {
            assert!(c.report.passed(), "{} {}: {:.3e}", c.op, c.shape, c.report.max_rel_error());
        }
    }
}
