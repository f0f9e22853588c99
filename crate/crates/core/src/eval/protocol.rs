use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use super::{evaluate, score_videos, EvalReport};
use crate::error::{invalid, Error, Result};
use crate::model::Model;
use crate::synth::{loo_rows, perturb, Clip, ManifestRow, Perturbation, Split};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// Train on all fake methods but one, test on the held-out one.
    Loo,
    /// One model tested on several independently generated sets.
    CrossSet,
    /// One model tested under every perturbation kind and level.
    Robustness,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Loo => "loo",
            Protocol::CrossSet => "cross-set",
            Protocol::Robustness => "robustness",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loo" | "cross-method-loo" => Ok(Protocol::Loo),
            "cross-set" => Ok(Protocol::CrossSet),
            "robustness" => Ok(Protocol::Robustness),
            _ => invalid(format!("unknown protocol `{s}`")),
        }
    }
}

/// AUC per held-out method or test set, with their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub protocol: Protocol,
    pub cells: Vec<(String, f64)>,
}

impl Grid {
    pub fn average(&self) -> f64 {
        self.cells.iter().map(|c| c.1).sum::<f64>() / self.cells.len().max(1) as f64
    }
}

/// AUC against perturbation level 0..=5 for one kind.
#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessCurve {
    pub kind: Perturbation,
    pub points: Vec<(usize, f64)>,
}

/// Leave-one-out over the fake methods present in `data`. `fit` receives
/// the held-out method and the train and validation videos of its view.
pub fn leave_one_out<F>(data: &[(ManifestRow, Clip)], mut fit: F) -> Result<(Grid, Vec<EvalReport>)>
where
    F: FnMut(&str, &[Clip], &[Clip]) -> Result<Model<f32>>,
{
    let mut methods: Vec<&str> = Vec::new();
    for (row, _) in data {
        if row.label == 1 && !methods.contains(&row.method.as_str()) {
            methods.push(&row.method);
        }
    }
    if methods.len() < 2 {
        return invalid(format!("leave-one-out needs at least two fake methods, the manifest has {}", methods.len()));
    }
    let rows: Vec<ManifestRow> = data.iter().map(|(r, _)| r.clone()).collect();
    let mut cells = Vec::new();
    let mut reports = Vec::new();
    for m in methods {
        let view: HashSet<String> = loo_rows(&rows, m).into_iter().map(|r| r.video_id).collect();
        let pick = |split: Split| -> Vec<Clip> {
            data.iter()
                .filter(|(r, _)| r.split == split && view.contains(&r.video_id))
                .map(|(_, c)| c.clone())
                .collect()
        };
        let model = fit(m, &pick(Split::Train), &pick(Split::Val))?;
        let report = evaluate(&model, &pick(Split::Test), m)?;
        cells.push((m.to_string(), report.auc));
        reports.push(report);
    }
    Ok((
        Grid {
            protocol: Protocol::Loo,
            cells,
        },
        reports,
    ))
}

/// Evaluates one model on each named set.
pub fn cross_set(model: &Model<f32>, sets: &[(String, Vec<Clip>)]) -> Result<(Grid, Vec<EvalReport>)> {
    let mut cells = Vec::new();
    let mut reports = Vec::new();
    for (name, videos) in sets {
        let report = evaluate(model, videos, name)?;
        cells.push((name.clone(), report.auc));
        reports.push(report);
    }
    Ok((
        Grid {
            protocol: Protocol::CrossSet,
            cells,
        },
        reports,
    ))
}

/// Evaluates one model on `test` under every kind and level. Level 0 is
/// the unperturbed evaluation, shared by all curves.
pub fn robustness(model: &Model<f32>, test: &[Clip]) -> Result<(Vec<RobustnessCurve>, Vec<EvalReport>)> {
    let clean = evaluate(model, test, "clean")?;
    let mut curves = Vec::new();
    let mut reports = vec![clean.clone()];
    for kind in Perturbation::ALL {
        let mut points = vec![(0, clean.auc)];
        for level in 1..=5 {
            let videos: Vec<Clip> = test.iter().map(|c| perturb(c, kind, level)).collect::<Result<_>>()?;
            let report = EvalReport::from_rows(kind.as_str(), Some((kind, level)), score_videos(model, &videos)?)?;
            points.push((level, report.auc));
            reports.push(report);
        }
        curves.push(RobustnessCurve { kind, points });
    }
    Ok((curves, reports))
}

/// `protocol,<cell>,…,Avg` header and one row of AUCs.
pub fn grid_csv(grid: &Grid) -> String {
    let mut out = String::from("protocol");
    for (name, _) in &grid.cells {
        write!(out, ",{name}").unwrap();
    }
    out.push_str(",Avg\n");
    out.push_str(grid.protocol.as_str());
    for (_, v) in &grid.cells {
        write!(out, ",{v:.6}").unwrap();
    }
    writeln!(out, ",{:.6}", grid.average()).unwrap();
    out
}

/// `kind,level,auc` rows.
pub fn curves_csv(curves: &[RobustnessCurve]) -> String {
    let mut out = String::from("kind,level,auc\n");
    for c in curves {
        for (level, v) in &c.points {
            writeln!(out, "{},{level},{v:.6}", c.kind).unwrap();
        }
    }
    out
}

/// One row per scored video across all reports.
pub fn videos_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("report,perturbation,level,video_id,method,label,score\n");
    for r in reports {
        let (kind, level) = match r.perturbation {
            Some((k, l)) => (k.as_str(), l),
            None => ("none", 0),
        };
        for row in &r.rows {
            writeln!(
                out,
                "{},{kind},{level},{},{},{},{:.9}",
                r.name, row.video_id, row.method, row.label, row.score
            )
            .unwrap();
        }
    }
    out
}
