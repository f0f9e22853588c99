//! Optimization recipe: BCE on the logit, SGD with momentum and L2 weight
//! decay, linear warm-up then cosine decay, best-by-validation selection.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::error::{invalid, shape_err, Result};
use crate::eval::{auc, score_videos};
use crate::kv::{kv_opt, parse_kv};
use crate::model::{decays, Model};
use crate::ops::{bce_with_logits, Mode};
use crate::params::ParamStore;
use crate::synth::{mix, Clip};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub seed: u64,
    /// Frames per training clip.
    pub clip_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            momentum: 0.9,
            weight_decay: 1e-4,
            warmup_epochs: 10,
            epochs: 100,
            lr_start: 0.01,
            lr_peak: 0.1,
            seed: 0,
            clip_len: 32,
        }
    }
}

const KEYS: [&str; 9] = [
    "batch_size",
    "momentum",
    "weight_decay",
    "warmup_epochs",
    "epochs",
    "lr_start",
    "lr_peak",
    "seed",
    "clip_len",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs >= self.epochs {
            return invalid(format!(
                "warm-up ({}) must be shorter than training ({} epochs)",
                self.warmup_epochs, self.epochs
            ));
        }
        if !(self.lr_start > 0.0 && self.lr_peak > 0.0) {
            return invalid("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return invalid("momentum must be in [0,1) and weight decay non-negative");
        }
        if self.batch_size == 0 || self.clip_len == 0 {
            return invalid("batch size and clip length must be positive");
        }
        Ok(())
    }

    /// Parses `key=value` lines; absent keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        TrainConfig::parse_over(text, &TrainConfig::default())
    }

    /// Like [`TrainConfig::parse`], with absent keys taken from `base`.
    pub fn parse_over(text: &str, base: &TrainConfig) -> Result<Self> {
        let map = parse_kv(text)?;
        if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return invalid(format!("unknown training key `{k}`"));
        }
        let d = base.clone();
        let cfg = TrainConfig {
            batch_size: kv_opt(&map, "batch_size")?.unwrap_or(d.batch_size),
            momentum: kv_opt(&map, "momentum")?.unwrap_or(d.momentum),
            weight_decay: kv_opt(&map, "weight_decay")?.unwrap_or(d.weight_decay),
            warmup_epochs: kv_opt(&map, "warmup_epochs")?.unwrap_or(d.warmup_epochs),
            epochs: kv_opt(&map, "epochs")?.unwrap_or(d.epochs),
            lr_start: kv_opt(&map, "lr_start")?.unwrap_or(d.lr_start),
            lr_peak: kv_opt(&map, "lr_peak")?.unwrap_or(d.lr_peak),
            seed: kv_opt(&map, "seed")?.unwrap_or(d.seed),
            clip_len: kv_opt(&map, "clip_len")?.unwrap_or(d.clip_len),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        format!(
            "batch_size={}\nmomentum={}\nweight_decay={}\nwarmup_epochs={}\nepochs={}\nlr_start={}\nlr_peak={}\nseed={}\nclip_len={}\n",
            self.batch_size,
            self.momentum,
            self.weight_decay,
            self.warmup_epochs,
            self.epochs,
            self.lr_start,
            self.lr_peak,
            self.seed,
            self.clip_len
        )
    }
}

/// Learning rate at `epoch`: linear from `lr_start` to `lr_peak` over the
/// warm-up, then `lr_peak·½(1 + cos(π(e−w)/(E−w)))` down to 0 at `E`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    let (w, total) = (cfg.warmup_epochs, cfg.epochs);
    if epoch > total {
        return invalid(format!("epoch {epoch} outside [0, {total}]"));
    }
    if w >= total {
        return invalid(format!("warm-up ({w}) must be shorter than training ({total} epochs)"));
    }
    if epoch < w {
        return Ok(cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * epoch as f64 / w as f64);
    }
    if epoch == total {
        return Ok(0.0);
    }
    let progress = (epoch - w) as f64 / (total - w) as f64;
    Ok(cfg.lr_peak * 0.5 * (1.0 + (PI * progress).cos()))
}

/// Binary cross-entropy of one logit in the stable log-sum-exp form.
pub fn bce_loss(logit: f64, label: u8) -> Result<f64> {
    if label > 1 {
        return invalid(format!("label must be 0 or 1, got {label}"));
    }
    bce_with_logits(logit, label as f64)
}

/// SGD hyper-parameters for one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// One step of `v ← m·v + g + wd·p; p ← p − lr·v`. Weight decay applies
/// only to tensors selected by [`decays`]; parameters without a gradient
/// are left alone, velocities start at zero.
pub fn sgd_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    velocity: &mut BTreeMap<String, Tensor<T>>,
    opt: Sgd,
) -> Result<()> {
    for (name, g) in grads {
        let Some(p) = params.get_mut(name) else {
            return invalid(format!("gradient for unknown parameter {name}"));
        };
        if p.shape() != g.shape() {
            return shape_err(format!("{name}: gradient {:?} vs parameter {:?}", g.shape(), p.shape()));
        }
        let v = velocity.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        if v.shape() != p.shape() {
            return shape_err(format!("{name}: velocity {:?} vs parameter {:?}", v.shape(), p.shape()));
        }
        let (m, lr) = (T::lit(opt.momentum), T::lit(opt.lr));
        let wd = if decays(name) { T::lit(opt.weight_decay) } else { T::zero() };
        for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = m * *vv + *gv + wd * *pv;
            *pv = *pv - lr * *vv;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// `None` without a two-class validation set.
    pub val_auc: Option<f64>,
}

/// `epoch,lr,train_loss,val_auc` rows.
pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_auc\n");
    for e in log {
        let auc = e.val_auc.map_or_else(|| "nan".to_string(), |a| format!("{a:.6}"));
        writeln!(out, "{},{:.12},{:.9},{auc}", e.epoch, e.lr, e.train_loss).unwrap();
    }
    out
}

pub struct TrainOutcome {
    /// Parameters after the last epoch.
    pub last: Model<f32>,
    /// Parameters of the epoch with the highest validation AUC (the first
    /// such epoch on ties), or the last epoch without validation.
    pub best: Model<f32>,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

fn check_videos(videos: &[Clip], clip_len: usize, what: &str) -> Result<()> {
    for v in videos {
        if v.dims()[0] < clip_len {
            return invalid(format!("{what} video {} has {} frames, fewer than {clip_len}", v.video_id, v.dims()[0]));
        }
    }
    Ok(())
}

/// Trains `model` on one random `clip_len` window per video per epoch,
/// visiting videos in a per-epoch shuffled order. Everything random is
/// drawn from `cfg.seed`, so a run is reproducible.
pub fn train(model: Model<f32>, train_set: &[Clip], val_set: &[Clip], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return invalid("training set is empty");
    }
    if model.clip_len() != cfg.clip_len {
        return invalid(format!(
            "model consumes {}-frame clips, config asks for {}",
            model.clip_len(),
            cfg.clip_len
        ));
    }
    check_videos(train_set, cfg.clip_len, "training")?;
    check_videos(val_set, cfg.clip_len, "validation")?;
    let val_labels: Vec<u8> = val_set.iter().map(|c| c.label.value()).collect();
    let validate = val_labels.contains(&0) && val_labels.contains(&1);

    let mut model = model;
    let mut velocity = BTreeMap::new();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model<f32>)> = None;
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64));
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let starts: Vec<usize> = order
            .iter()
            .map(|&i| rng.gen_range(0..=train_set[i].dims()[0] - cfg.clip_len))
            .collect();
        let mut loss_sum = 0.0f64;
        for (batch, batch_starts) in order.chunks(cfg.batch_size).zip(starts.chunks(cfg.batch_size)) {
            let windows: Vec<Tensor<f32>> = batch
                .iter()
                .zip(batch_starts)
                .map(|(&i, &s)| train_set[i].window(s, cfg.clip_len))
                .collect::<Result<_>>()?;
            let labels: Vec<f32> = batch.iter().map(|&i| train_set[i].label.value() as f32).collect();
            let mut tape = Tape::new();
            let x = tape.input(Tensor::stack(&windows)?);
            let out = model.forward(&mut tape, x, Mode::Train)?;
            let loss = tape.bce_with_logits(out.logits, &labels)?;
            loss_sum += tape.value(loss).item() as f64 * batch.len() as f64;
            let grads = tape.backward(loss)?;
            sgd_step(
                model.params_mut(),
                grads.params(),
                &mut velocity,
                Sgd {
                    lr,
                    momentum: cfg.momentum,
                    weight_decay: cfg.weight_decay,
                },
            )?;
            model.update_running(&out.stats);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_auc = if validate {
            let rows = score_videos(&model, val_set)?;
            Some(auc(&rows.iter().map(|r| r.score).collect::<Vec<_>>(), &val_labels)?)
        } else {
            None
        };
        log::info!("epoch {epoch} lr {lr:.6} loss {train_loss:.6} val_auc {val_auc:?}");
        log.push(EpochLog {
            epoch,
            lr,
            train_loss,
            val_auc,
        });
        if let Some(a) = val_auc {
            if best.as_ref().map_or(true, |b| a > b.0) {
                best = Some((a, epoch, model.clone()));
            }
        }
    }
    let (best_epoch, best) = match best {
        Some((_, e, m)) => (e, m),
        None => (cfg.epochs - 1, model.clone()),
    };
    Ok(TrainOutcome {
        last: model,
        best,
        best_epoch,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn schedule_points() {
        let c = reference();
        assert_eq!(lr_schedule(0, &c).unwrap(), 0.01);
        assert!((lr_schedule(10, &c).unwrap() - 0.1).abs() < 1e-12);
        assert!((lr_schedule(55, &c).unwrap() - 0.1 * 0.5 * (1.0 + (PI * 45.0 / 90.0).cos())).abs() < 1e-12);
        assert!((lr_schedule(55, &c).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(lr_schedule(100, &c).unwrap(), 0.0);
        assert!(lr_schedule(101, &c).is_err());
    }

    #[test]
    fn schedule_continuous_at_warmup_end() {
        let c = reference();
        // the warm-up line extended to epoch 10 meets the cosine branch
        let line = c.lr_start + (c.lr_peak - c.lr_start) * 10.0 / 10.0;
        assert!((line - lr_schedule(10, &c).unwrap()).abs() < 1e-12);
        for e in 0..=100 {
            assert!(lr_schedule(e, &c).unwrap() >= 0.0);
        }
    }

    fn one(name: &str, p: f64, g: f64, v: Option<f64>) -> (ParamStore<f64>, BTreeMap<String, Tensor<f64>>, BTreeMap<String, Tensor<f64>>) {
        let mut ps = ParamStore::new();
        ps.insert(name, Tensor::from_vec(vec![p]));
        let grads = BTreeMap::from([(name.to_string(), Tensor::from_vec(vec![g]))]);
        let vel = v.map_or_else(BTreeMap::new, |v| BTreeMap::from([(name.to_string(), Tensor::from_vec(vec![v]))]));
        (ps, grads, vel)
    }

    #[test]
    fn sgd_hand_updates() {
        let (mut p, g, mut v) = one("w.weight", 1.0, 1.0, None);
        sgd_step(&mut p, &g, &mut v, Sgd { lr: 0.1, momentum: 0.0, weight_decay: 0.0 }).unwrap();
        assert!((p.get("w.weight").unwrap().data()[0] - 0.9).abs() < 1e-15);

        let (mut p, g, mut v) = one("w.weight", 1.0, 0.0, Some(1.0));
        sgd_step(&mut p, &g, &mut v, Sgd { lr: 0.1, momentum: 0.9, weight_decay: 1e-4 }).unwrap();
        assert!((v["w.weight"].data()[0] - 0.9001).abs() < 1e-15);
        assert!((p.get("w.weight").unwrap().data()[0] - 0.90999).abs() < 1e-15);

        let (mut p, g, mut v) = one("w.weight", 1.0, 3.0, Some(2.0));
        sgd_step(&mut p, &g, &mut v, Sgd { lr: 0.0, momentum: 0.9, weight_decay: 1e-4 }).unwrap();
        assert_eq!(p.get("w.weight").unwrap().data()[0], 1.0);
    }

    #[test]
    fn norm_gain_skips_decay() {
        let (mut p, g, mut v) = one("c.bn.gain", 1.0, 0.0, None);
        sgd_step(&mut p, &g, &mut v, Sgd { lr: 0.1, momentum: 0.9, weight_decay: 0.5 }).unwrap();
        assert_eq!(p.get("c.bn.gain").unwrap().data()[0], 1.0);
    }

    #[test]
    fn sgd_descends_quadratic() {
        let (mut p, _, mut v) = one("x.weight", 2.0, 0.0, None);
        for _ in 0..5 {
            let x = p.get("x.weight").unwrap().data()[0];
            let g = BTreeMap::from([("x.weight".to_string(), Tensor::from_vec(vec![2.0 * x]))]);
            sgd_step(&mut p, &g, &mut v, Sgd { lr: 1e-3, momentum: 0.0, weight_decay: 0.0 }).unwrap();
            assert!(p.get("x.weight").unwrap().data()[0].powi(2) < x * x);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = ParamStore::new();
        p.insert("w.weight", Tensor::<f64>::zeros(vec![2]));
        let g = BTreeMap::from([("w.weight".to_string(), Tensor::zeros(vec![3]))]);
        assert!(sgd_step(&mut p, &g, &mut BTreeMap::new(), Sgd { lr: 0.1, momentum: 0.0, weight_decay: 0.0 }).is_err());
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(0.0, 1).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((bce_loss(3.0, 1).unwrap() - 0.04859).abs() < 1e-5);
        assert!(bce_loss(100.0, 0).unwrap().is_finite());
        assert!(bce_loss(0.0, 2).is_err());
    }

    #[test]
    fn config_round_trip() {
        let c = TrainConfig {
            epochs: 30,
            warmup_epochs: 3,
            clip_len: 16,
            seed: 9,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(TrainConfig::parse("").unwrap(), TrainConfig::default());
        assert!(TrainConfig::parse("lr=0.1").is_err());
        assert!(TrainConfig::parse("warmup_epochs=10\nepochs=10").is_err());
    }
}
