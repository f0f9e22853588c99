//! Runnable model: backbone, temporal transformer and classifier head.

mod checkpoint;
mod config;
mod shuffle;

pub use checkpoint::{load_bundle, load_checkpoint, save_bundle, save_checkpoint};
pub use config::{HeadConfig, TransformerConfig};
pub use shuffle::spatial_shuffle;

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::arch::{expand, output_shape, ArchSpec, ConvUnit, Unit};
use crate::autograd::{BatchStats, Tape, Var};
use crate::error::{invalid, shape_err, Result};
use crate::ops::{Activation, Conv3dGeometry, Mode, RunningStats, DEFAULT_EPS};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// Backbone plus head with its parameters and batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    arch: ArchSpec,
    head: HeadConfig,
    units: Vec<Unit>,
    params: ParamStore<T>,
    running: BTreeMap<String, RunningStats<T>>,
}

/// Result of a forward pass recorded on a tape.
pub struct Forward<T> {
    /// One logit per clip, shape `[N]`.
    pub logits: Var,
    /// Pre-head feature per clip, `N×D` (class token after the final
    /// norm) or `N×C` (time-averaged backbone features).
    pub features: Var,
    /// Backbone feature sequence `N×T×C`.
    pub sequence: Var,
    /// Train-mode batch statistics per batch-norm layer.
    pub stats: Vec<(String, BatchStats<T>)>,
}

fn conv_units(units: &[Unit]) -> Vec<&ConvUnit> {
    let mut out = Vec::new();
    for u in units {
        match u {
            Unit::Conv(c) => out.push(c),
            Unit::Bottleneck { blocks, .. } => out.extend(blocks.iter().flat_map(|b| b.convs())),
            _ => {}
        }
    }
    out
}

/// Names of trainable tensors that receive weight decay.
pub fn decays(name: &str) -> bool {
    name.ends_with(".weight")
}

impl<T: Scalar> Model<T> {
    /// Builds a model with freshly initialized parameters.
    ///
    /// Conv weights are He-normal, batch-norm gains 1 (0 for the last norm
    /// of every residual branch), shifts 0. Transformer linears are normal
    /// with std `1/sqrt(fan_in)`, the class token and position embeddings
    /// normal with std 0.02, the classifier starts at zero.
    pub fn new(arch: ArchSpec, head: HeadConfig, seed: u64) -> Result<Self> {
        let feat = output_shape(&arch)?;
        if !arch.ends_with_spatial_pool() {
            return invalid("the backbone must end with a spatial average pool");
        }
        match &head {
            HeadConfig::Transformer(t) => {
                t.validate()?;
                if t.tokens != feat[1] || t.feature_dim != feat[0] {
                    return invalid(format!(
                        "transformer expects {}x{} features, backbone gives {}x{}",
                        t.feature_dim, t.tokens, feat[0], feat[1]
                    ));
                }
            }
            HeadConfig::Linear { feature_dim } if *feature_dim != feat[0] => {
                return invalid(format!(
                    "linear head expects {feature_dim} features, backbone gives {}",
                    feat[0]
                ));
            }
            _ => {}
        }
        let units = expand(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |shape: Vec<usize>, std: f64| -> Tensor<T> {
            let d = Normal::new(0.0, std).expect("positive std");
            Tensor::from_fn(shape, |_| T::lit(d.sample(&mut rng)))
        };
        let mut params = ParamStore::new();
        let mut running = BTreeMap::new();
        for c in conv_units(&units) {
            let fan_in = c.cin * c.kernel.iter().product::<usize>();
            let [kt, kh, kw] = c.kernel;
            params.insert(
                format!("{}.weight", c.name),
                normal(vec![c.cout, c.cin, kt, kh, kw], (2.0 / fan_in as f64).sqrt()),
            );
            let gain = if c.name.ends_with(".c") { T::zero() } else { T::one() };
            params.insert(format!("{}.bn.gain", c.name), Tensor::full(vec![c.cout], gain));
            params.insert(format!("{}.bn.shift", c.name), Tensor::zeros(vec![c.cout]));
            running.insert(c.name.clone(), RunningStats::new(c.cout));
        }
        match head {
            HeadConfig::None => {}
            HeadConfig::Linear { feature_dim } => {
                params.insert("head.weight", Tensor::zeros(vec![1, feature_dim]));
                params.insert("head.bias", Tensor::zeros(vec![1]));
            }
            HeadConfig::Transformer(t) => {
                let (d, inner, m) = (t.dim, t.inner_dim(), t.mlp_dim);
                let std = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
                params.insert("tt.proj.weight", normal(vec![d, t.feature_dim], std(t.feature_dim)));
                params.insert("tt.proj.bias", Tensor::zeros(vec![d]));
                params.insert("tt.cls", normal(vec![d], 0.02));
                params.insert("tt.pos", normal(vec![t.tokens + 1, d], 0.02));
                for l in 0..t.layers {
                    let p = format!("tt.block{l}");
                    for ln in ["ln1", "ln2"] {
                        params.insert(format!("{p}.{ln}.gain"), Tensor::full(vec![d], T::one()));
                        params.insert(format!("{p}.{ln}.shift"), Tensor::zeros(vec![d]));
                    }
                    for q in ["q", "k", "v"] {
                        params.insert(format!("{p}.attn.{q}.weight"), normal(vec![inner, d], std(d)));
                    }
                    params.insert(format!("{p}.attn.out.weight"), normal(vec![d, inner], std(inner)));
                    params.insert(format!("{p}.attn.out.bias"), Tensor::zeros(vec![d]));
                    params.insert(format!("{p}.mlp.fc1.weight"), normal(vec![m, d], std(d)));
                    params.insert(format!("{p}.mlp.fc1.bias"), Tensor::zeros(vec![m]));
                    params.insert(format!("{p}.mlp.fc2.weight"), normal(vec![d, m], std(m)));
                    params.insert(format!("{p}.mlp.fc2.bias"), Tensor::zeros(vec![d]));
                }
                params.insert("tt.norm.gain", Tensor::full(vec![d], T::one()));
                params.insert("tt.norm.shift", Tensor::zeros(vec![d]));
                params.insert("head.weight", Tensor::zeros(vec![1, d]));
                params.insert("head.bias", Tensor::zeros(vec![1]));
            }
        }
        Ok(Model {
            arch,
            head,
            units,
            params,
            running,
        })
    }

    /// Reassembles a model from stored parameters, checking that every
    /// expected tensor is present with the right shape.
    pub fn from_parts(
        arch: ArchSpec,
        head: HeadConfig,
        params: ParamStore<T>,
        running: BTreeMap<String, RunningStats<T>>,
    ) -> Result<Self> {
        let template = Model::<T>::new(arch, head, 0)?;
        for (name, t) in template.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return shape_err(format!(
                    "parameter {name}: expected {:?}, got {:?}",
                    t.shape(),
                    got.shape()
                ));
            }
        }
        if params.len() != template.params.len() {
            return invalid(format!(
                "expected {} parameters, got {}",
                template.params.len(),
                params.len()
            ));
        }
        for (name, rs) in &template.running {
            match running.get(name) {
                Some(r) if r.mean.shape() == rs.mean.shape() && r.var.shape() == rs.var.shape() => {}
                _ => return invalid(format!("missing or malformed running statistics for {name}")),
            }
        }
        Ok(Model {
            params,
            running,
            ..template
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn head(&self) -> &HeadConfig {
        &self.head
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn running(&self) -> &BTreeMap<String, RunningStats<T>> {
        &self.running
    }

    pub fn running_mut(&mut self) -> &mut BTreeMap<String, RunningStats<T>> {
        &mut self.running
    }

    /// Clip length T the model consumes.
    pub fn clip_len(&self) -> usize {
        self.arch.input[1]
    }

    /// Same parameters, different declared input shape.
    pub fn with_input(&self, input: [usize; 4]) -> Result<Self> {
        let arch = self.arch.clone().with_input(input);
        let feat = output_shape(&arch)?;
        if let HeadConfig::Transformer(t) = &self.head {
            if t.tokens != feat[1] {
                return invalid(format!("input {input:?} yields {} tokens, head expects {}", feat[1], t.tokens));
            }
        }
        Ok(Model {
            arch,
            units: self.units.clone(),
            ..self.clone()
        })
    }

    /// Same model evaluated on a single pixel per frame.
    pub fn collapsed(&self) -> Result<Self> {
        let [c, t, _, _] = self.arch.input;
        self.with_input([c, t, 1, 1])
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            arch: self.arch.clone(),
            head: self.head,
            units: self.units.clone(),
            params: self.params.cast(),
            running: self
                .running
                .iter()
                .map(|(k, r)| {
                    (
                        k.clone(),
                        RunningStats {
                            mean: r.mean.cast(),
                            var: r.var.cast(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Applies train-mode batch statistics to the running estimates.
    pub fn update_running(&mut self, stats: &[(String, BatchStats<T>)]) {
        for (name, s) in stats {
            if let Some(r) = self.running.get_mut(name) {
                r.update(&s.mean, &s.var, s.count);
            }
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<usize> {
        let [c, t, h, w] = self.arch.input;
        match shape {
            [n, rest @ ..] if rest == [c, t, h, w] => Ok(*n),
            _ => shape_err(format!(
                "model expects clips N×{c}×{t}×{h}×{w}, got {shape:?}"
            )),
        }
    }

    /// Records the full forward pass of a batch `N×C×T×H×W` on `tape`,
    /// binding every parameter as a trainable leaf.
    pub fn forward(&self, tape: &mut Tape<T>, clips: Var, mode: Mode) -> Result<Forward<T>> {
        let vars: HashMap<String, Var> = self
            .params
            .iter()
            .map(|(name, t)| (name.clone(), tape.param(name.clone(), t.clone())))
            .collect();
        self.forward_bound(tape, &vars, clips, mode)
    }

    /// Like [`Model::forward`] with parameters already on the tape.
    pub fn forward_bound(
        &self,
        tape: &mut Tape<T>,
        vars: &HashMap<String, Var>,
        clips: Var,
        mode: Mode,
    ) -> Result<Forward<T>> {
        let n = self.check_input(tape.shape(clips))?;
        let p = |name: &str| -> Result<Var> {
            vars.get(name)
                .copied()
                .map_or_else(|| invalid(format!("parameter {name} is not bound")), Ok)
        };
        let mut stats = Vec::new();
        let conv = |tape: &mut Tape<T>, x: Var, c: &ConvUnit, stats: &mut Vec<(String, BatchStats<T>)>| -> Result<Var> {
            let w = p(&format!("{}.weight", c.name))?;
            let geom = Conv3dGeometry::new(c.stride, c.padding);
            let y = tape.conv3d(x, w, None, geom)?;
            let g = p(&format!("{}.bn.gain", c.name))?;
            let s = p(&format!("{}.bn.shift", c.name))?;
            let running = match mode {
                Mode::Train => None,
                Mode::Eval => Some(&self.running[&c.name]),
            };
            let (y, st) = tape.batch_norm(y, g, s, T::lit(DEFAULT_EPS), running)?;
            if let Some(st) = st {
                stats.push((c.name.clone(), st));
            }
            Ok(if c.relu { tape.relu(y) } else { y })
        };

        let mut x = clips;
        for unit in &self.units {
            x = match unit {
                Unit::Conv(c) => conv(tape, x, c, &mut stats)?,
                Unit::MaxPool { geom, .. } => tape.maxpool3d(x, *geom)?,
                Unit::Bottleneck { blocks, .. } => {
                    for b in blocks {
                        let mut h = conv(tape, x, &b.a, &mut stats)?;
                        h = conv(tape, h, &b.b, &mut stats)?;
                        if let Some(g) = &b.b_pool {
                            h = tape.maxpool3d(h, *g)?;
                        }
                        h = conv(tape, h, &b.c, &mut stats)?;
                        let mut skip = x;
                        if let Some(sc) = &b.shortcut {
                            skip = conv(tape, skip, sc, &mut stats)?;
                        }
                        if let Some(g) = &b.shortcut_pool {
                            skip = tape.maxpool3d(skip, *g)?;
                        }
                        let sum = tape.add(h, skip)?;
                        x = tape.relu(sum);
                    }
                    x
                }
                Unit::SpatialAvgPool { .. } => tape.spatial_mean(x)?,
            };
        }
        let &[_, c, t, _, _] = tape.shape(x) else {
            return shape_err(format!("unexpected backbone output {:?}", tape.shape(x)));
        };
        let f = tape.reshape(x, vec![n, c, t])?;
        let sequence = tape.swap_last_two(f)?;

        let (logits, features) = match &self.head {
            HeadConfig::None => {
                let pooled = tape.mean_tokens(sequence)?;
                let zero = tape.input(Tensor::zeros(vec![n]));
                (zero, pooled)
            }
            HeadConfig::Linear { .. } => {
                let pooled = tape.mean_tokens(sequence)?;
                let y = tape.linear(pooled, p("head.weight")?, Some(p("head.bias")?))?;
                (tape.reshape(y, vec![n])?, pooled)
            }
            HeadConfig::Transformer(cfg) => {
                let z = embed_sequence(tape, sequence, p("tt.proj.weight")?, p("tt.proj.bias")?, p("tt.cls")?, p("tt.pos")?)?;
                let mut z = z;
                for l in 0..cfg.layers {
                    let w = BlockVars::bind(&p, l)?;
                    z = encoder_block(tape, z, &w, cfg)?;
                }
                let (logits, feat) = classify(tape, z, p("tt.norm.gain")?, p("tt.norm.shift")?, p("head.weight")?, p("head.bias")?)?;
                (logits, feat)
            }
        };
        Ok(Forward {
            logits,
            features,
            sequence,
            stats,
        })
    }

    fn eval_forward(&self, clips: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let x = tape.input(clips.clone());
        let out = self.forward(&mut tape, x, Mode::Eval)?;
        Ok((tape.value(out.logits).data().to_vec(), tape.value(out.features).clone()))
    }

    /// Eval-mode logits for a batch `N×C×T×H×W`.
    pub fn logits(&self, clips: &Tensor<T>) -> Result<Vec<T>> {
        Ok(self.eval_forward(clips)?.0)
    }

    /// Eval-mode probabilities for a batch `N×C×T×H×W`.
    pub fn predict(&self, clips: &Tensor<T>) -> Result<Vec<T>> {
        Ok(self.logits(clips)?.into_iter().map(crate::ops::sigmoid).collect())
    }

    /// Eval-mode pre-head features, `N×D`.
    pub fn features(&self, clips: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.eval_forward(clips)?.1)
    }

    /// Eval-mode backbone feature sequence `N×T×C` (F transposed).
    pub fn backbone(&self, clips: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.input(clips.clone());
        let out = self.forward(&mut tape, x, Mode::Eval)?;
        Ok(tape.value(out.sequence).clone())
    }

    /// Predicts one clip `C×T×H×W`.
    pub fn predict_clip(&self, clip: &Tensor<T>) -> Result<T> {
        let batch = Tensor::stack(std::slice::from_ref(clip))?;
        Ok(self.predict(&batch)?[0])
    }
}

/// `z_0 = [cls, W·F_1 + b, …, W·F_N + b] + E_pos` for tokens `B×N×C`.
pub fn embed_sequence<T: Scalar>(
    tape: &mut Tape<T>,
    tokens: Var,
    proj_w: Var,
    proj_b: Var,
    cls: Var,
    pos: Var,
) -> Result<Var> {
    let n = tape.shape(tokens).get(1).copied().unwrap_or(0);
    let rows = tape.shape(pos)[0];
    if rows != n + 1 {
        return shape_err(format!(
            "{n} time steps need {} position rows, got {rows}",
            n + 1
        ));
    }
    let projected = tape.linear(tokens, proj_w, Some(proj_b))?;
    let z = tape.prepend_token(projected, cls)?;
    tape.add_broadcast(z, pos)
}

/// `logit = W·LN(z_L[0]) + b` for `B×S×D` tokens; returns the logits `[B]`
/// and the normalized class-token feature `B×D`.
pub fn classify<T: Scalar>(
    tape: &mut Tape<T>,
    z: Var,
    norm_gain: Var,
    norm_shift: Var,
    head_w: Var,
    head_b: Var,
) -> Result<(Var, Var)> {
    let b = tape.shape(z)[0];
    let cls = tape.select_token(z, 0)?;
    let feat = tape.layer_norm(cls, norm_gain, norm_shift, T::lit(DEFAULT_EPS))?;
    let y = tape.linear(feat, head_w, Some(head_b))?;
    Ok((tape.reshape(y, vec![b])?, feat))
}

/// Tape handles for one encoder block.
pub struct BlockVars {
    pub ln1: (Var, Var),
    pub q: Var,
    pub k: Var,
    pub v: Var,
    pub out: (Var, Var),
    pub ln2: (Var, Var),
    pub fc1: (Var, Var),
    pub fc2: (Var, Var),
}

impl BlockVars {
    pub fn bind(p: &impl Fn(&str) -> Result<Var>, layer: usize) -> Result<Self> {
        let n = |s: &str| p(&format!("tt.block{layer}.{s}"));
        Ok(BlockVars {
            ln1: (n("ln1.gain")?, n("ln1.shift")?),
            q: n("attn.q.weight")?,
            k: n("attn.k.weight")?,
            v: n("attn.v.weight")?,
            out: (n("attn.out.weight")?, n("attn.out.bias")?),
            ln2: (n("ln2.gain")?, n("ln2.shift")?),
            fc1: (n("mlp.fc1.weight")?, n("mlp.fc1.bias")?),
            fc2: (n("mlp.fc2.weight")?, n("mlp.fc2.bias")?),
        })
    }
}

/// Multi-head self-attention: Q/K/V projections, scaled dot-product
/// attention per head, output projection.
pub fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: &BlockVars,
    heads: usize,
    head_dim: usize,
) -> Result<Var> {
    let q = tape.linear(x, w.q, None)?;
    let k = tape.linear(x, w.k, None)?;
    let v = tape.linear(x, w.v, None)?;
    let a = tape.attention(q, k, v, heads, head_dim)?;
    tape.linear(a, w.out.0, Some(w.out.1))
}

/// Pre-norm encoder block: `z' = MSA(LN(z)) + z`, `z'' = MLP(LN(z')) + z'`.
pub fn encoder_block<T: Scalar>(tape: &mut Tape<T>, z: Var, w: &BlockVars, cfg: &TransformerConfig) -> Result<Var> {
    let eps = T::lit(DEFAULT_EPS);
    let h = tape.layer_norm(z, w.ln1.0, w.ln1.1, eps)?;
    let a = multi_head_attention(tape, h, w, cfg.heads, cfg.head_dim)?;
    let z1 = tape.add(a, z)?;
    let h = tape.layer_norm(z1, w.ln2.0, w.ln2.1, eps)?;
    let h = tape.linear(h, w.fc1.0, Some(w.fc1.1))?;
    let h = tape.activation(h, Activation::Gelu);
    let h = tape.linear(h, w.fc2.0, Some(w.fc2.1))?;
    tape.add(h, z1)
}
