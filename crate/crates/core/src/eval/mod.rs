//! Video-level scoring, the rank AUC, evaluation protocols and feature
//! export.

mod protocol;

pub use protocol::{
    cross_set, curves_csv, grid_csv, leave_one_out, robustness, videos_csv, Grid, Protocol, RobustnessCurve,
};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::model::Model;
use crate::synth::{Clip, Perturbation};
use crate::tensor::Tensor;

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs where the
/// positive scores higher, ties counting one half. Computed from midranks
/// in O(n log n).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return invalid(format!("{} scores for {} labels", scores.len(), labels.len()));
    }
    if let Some(l) = labels.iter().find(|l| **l > 1) {
        return invalid(format!("label must be 0 or 1, got {l}"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return invalid("scores contain NaN");
    }
    let pos = labels.iter().filter(|l| **l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return invalid(format!("AUC needs both classes, got {pos} positive and {neg} negative"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum of the positives keeps midranks integral
    let mut rank2 = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u64;
        rank2 += mid2 * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        i = j + 1;
    }
    let (p, n) = (pos as u64, neg as u64);
    // 2U = 2R − p(p+1)
    let u2 = rank2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Non-overlapping windows of `len` frames, trailing remainder dropped.
pub fn clip_windows(video: &Clip, len: usize) -> Result<Vec<Tensor<f32>>> {
    let t = video.dims()[0];
    if len == 0 || t < len {
        return invalid(format!("video {} has {t} frames, shorter than one {len}-frame clip", video.video_id));
    }
    (0..t / len).map(|k| video.window(k * len, len)).collect()
}

/// Mean clip probability over the video's non-overlapping windows.
pub fn video_score(model: &Model<f32>, video: &Clip) -> Result<f64> {
    let windows = clip_windows(video, model.clip_len())?;
    let mut total = 0.0f64;
    for chunk in windows.chunks(8) {
        let probs = model.predict(&Tensor::stack(chunk)?)?;
        total += probs.iter().map(|p| *p as f64).sum::<f64>();
    }
    Ok(total / windows.len() as f64)
}

/// Mean pre-head feature over the video's non-overlapping windows.
pub fn video_feature(model: &Model<f32>, video: &Clip) -> Result<Vec<f64>> {
    let windows = clip_windows(video, model.clip_len())?;
    let mut acc: Vec<f64> = Vec::new();
    for chunk in windows.chunks(8) {
        let f = model.features(&Tensor::stack(chunk)?)?;
        let d = f.shape()[1];
        acc.resize(d, 0.0);
        for row in f.data().chunks(d) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += *v as f64;
            }
        }
    }
    let n = windows.len() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub video_id: String,
    pub method: String,
    pub label: u8,
    pub score: f64,
}

/// One scored set of videos.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// What was evaluated, e.g. a held-out method or a set name.
    pub name: String,
    pub perturbation: Option<(Perturbation, usize)>,
    pub rows: Vec<EvalRow>,
    pub auc: f64,
    /// AUC of each fake method's videos against all real videos.
    pub per_method: Vec<(String, f64)>,
}

impl EvalReport {
    pub fn from_rows(name: impl Into<String>, perturbation: Option<(Perturbation, usize)>, rows: Vec<EvalRow>) -> Result<Self> {
        let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
        let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
        let overall = auc(&scores, &labels)?;
        let mut methods: Vec<&str> = rows.iter().filter(|r| r.label == 1).map(|r| r.method.as_str()).collect();
        methods.sort_unstable();
        methods.dedup();
        let mut per_method = Vec::new();
        for m in methods {
            let sub: Vec<&EvalRow> = rows.iter().filter(|r| r.label == 0 || r.method == m).collect();
            let s: Vec<f64> = sub.iter().map(|r| r.score).collect();
            let l: Vec<u8> = sub.iter().map(|r| r.label).collect();
            per_method.push((m.to_string(), auc(&s, &l)?));
        }
        Ok(EvalReport {
            name: name.into(),
            perturbation,
            rows,
            auc: overall,
            per_method,
        })
    }
}

/// Scores every video (in parallel; the result does not depend on the
/// schedule) and assembles a report.
pub fn evaluate(model: &Model<f32>, videos: &[Clip], name: &str) -> Result<EvalReport> {
    let rows = score_videos(model, videos)?;
    EvalReport::from_rows(name, None, rows)
}

pub(crate) fn score_videos(model: &Model<f32>, videos: &[Clip]) -> Result<Vec<EvalRow>> {
    videos
        .par_iter()
        .map(|v| {
            Ok(EvalRow {
                video_id: v.video_id.clone(),
                method: v.method.clone(),
                label: v.label.value(),
                score: video_score(model, v)?,
            })
        })
        .collect()
}

/// Writes one row per video: `video_id,label,method,f0,…,f{D-1}`.
pub fn export_features(model: &Model<f32>, videos: &[Clip], out: impl AsRef<Path>) -> Result<usize> {
    let feats: Vec<Vec<f64>> = videos.par_iter().map(|v| video_feature(model, v)).collect::<Result<_>>()?;
    let d = feats.first().map_or(0, Vec::len);
    let mut text = String::from("video_id,label,method");
    for k in 0..d {
        write!(text, ",f{k}").unwrap();
    }
    text.push('\n');
    for (v, f) in videos.iter().zip(&feats) {
        write!(text, "{},{},{}", v.video_id, v.label.value(), v.method).unwrap();
        for x in f {
            write!(text, ",{x:.9e}").unwrap();
        }
        text.push('\n');
    }
    fs::write(out, text)?;
    Ok(videos.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(scores: &[f64], labels: &[u8]) -> f64 {
        let mut s = 0.0;
        let (mut p, mut n) = (0, 0);
        for (i, li) in labels.iter().enumerate() {
            if *li == 1 {
                p += 1;
            } else {
                n += 1;
            }
            for (j, lj) in labels.iter().enumerate() {
                if *li == 1 && *lj == 0 {
                    s += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        s / (p * n) as f64
    }

    #[test]
    fn closed_cases() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auc(&[0.0, 0.0, 1.0, 1.0], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_rejected() {
        assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(auc(&[0.1, 0.2], &[0, 2]).is_err());
        assert!(auc(&[0.1], &[0, 1]).is_err());
    }

    #[test]
    fn matches_pair_count_with_ties() {
        let s = [0.5, 0.2, 0.5, 0.9, 0.2, 0.2, 0.7];
        let l = [1, 0, 0, 1, 1, 0, 0];
        assert_eq!(auc(&s, &l).unwrap(), pairs(&s, &l));
    }
}
