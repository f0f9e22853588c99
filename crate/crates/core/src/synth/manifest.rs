//! Dataset generation to disk: STN1 clip files plus a JSON-lines manifest.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gen_fake, gen_real, hash_str, mix, Clip, Label, Method, SceneParams};
use crate::error::{invalid, Error, Result};
use crate::tensor::{read_stn, write_stn};

/// Stamped into every manifest row; bump when the generator or the
/// perturbation ladder changes.
pub const GENERATOR_VERSION: &str = "synthclips-1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => invalid(format!("unknown split `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    /// Clip file, relative to the manifest's directory.
    pub path: String,
    pub label: u8,
    pub method: String,
    pub video_id: String,
    pub split: Split,
    pub seed: u64,
    pub version: String,
}

/// What to generate.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSpec {
    pub real: usize,
    /// Fake videos per method.
    pub fake: usize,
    pub methods: Vec<Method>,
    /// `[T, H, W]` of every video.
    pub size: [usize; 3],
    pub strength: f64,
    /// Train and validation fractions; the test split takes the rest.
    pub fractions: [f64; 2],
    pub seed: u64,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            real: 8,
            fake: 8,
            methods: vec![Method::FlickerA],
            size: [16, 32, 32],
            strength: 0.3,
            fractions: [0.6, 0.2],
            seed: 0,
        }
    }
}

fn split_sizes(n: usize, fractions: [f64; 2]) -> [usize; 3] {
    let train = (n as f64 * fractions[0]).round() as usize;
    let val = ((n as f64 * fractions[1]).round() as usize).min(n - train.min(n));
    let train = train.min(n);
    [train, val, n - train - val]
}

fn split_of(i: usize, sizes: [usize; 3]) -> Split {
    if i < sizes[0] {
        Split::Train
    } else if i < sizes[0] + sizes[1] {
        Split::Val
    } else {
        Split::Test
    }
}

fn plan(spec: &DataSpec) -> Result<Vec<ManifestRow>> {
    let f = spec.fractions;
    if f.iter().any(|v| !(*v > 0.0)) || f[0] + f[1] >= 1.0 {
        return invalid(format!("split fractions {f:?} must be positive and leave room for a test split"));
    }
    if spec.methods.is_empty() && spec.fake > 0 {
        return invalid("fake clips requested without any method");
    }
    let mut groups: Vec<(&str, Label, usize)> = vec![("real", Label::Real, spec.real)];
    for m in &spec.methods {
        if groups.iter().any(|g| g.0 == m.as_str()) {
            return invalid(format!("method {m} listed twice"));
        }
        groups.push((m.as_str(), Label::Fake, spec.fake));
    }
    let mut rows = Vec::new();
    for (name, label, n) in groups {
        let sizes = split_sizes(n, spec.fractions);
        if sizes.contains(&0) {
            return invalid(format!(
                "{n} {name} videos leave an empty split ({} train, {} val, {} test)",
                sizes[0], sizes[1], sizes[2]
            ));
        }
        for i in 0..n {
            let video_id = format!("{name}-{i:04}");
            rows.push(ManifestRow {
                path: format!("clips/{video_id}.stn"),
                label: label.value(),
                method: name.to_string(),
                split: split_of(i, sizes),
                seed: mix(spec.seed, hash_str(&video_id)),
                video_id,
                version: GENERATOR_VERSION.to_string(),
            });
        }
    }
    Ok(rows)
}

/// Renders the clip a manifest row describes.
pub fn render_row(row: &ManifestRow, spec: &DataSpec) -> Result<Clip> {
    let [t, h, w] = spec.size;
    let scene = SceneParams::random(row.seed, h, w);
    let mut clip = match row.method.as_str() {
        "real" => gen_real(&scene, t, h, w)?,
        m => gen_fake(&scene, m.parse()?, spec.strength, t, h, w)?,
    };
    clip.video_id = row.video_id.clone();
    Ok(clip)
}

/// Generates every clip of `spec` in memory, rows in manifest order.
/// Each clip depends only on (seed, video id), so the parallel result
/// matches a serial one bit for bit.
pub fn generate(spec: &DataSpec) -> Result<Vec<(ManifestRow, Clip)>> {
    let rows = plan(spec)?;
    rows.into_par_iter()
        .map(|row| render_row(&row, spec).map(|clip| (row, clip)))
        .collect()
}

pub fn write_manifest(rows: &[ManifestRow], path: impl AsRef<Path>) -> Result<()> {
    let mut text = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut text, row)?;
        text.push(b'\n');
    }
    fs::File::create(path)?.write_all(&text)?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        Label::from_value(row.label)?;
        rows.push(row);
    }
    Ok(rows)
}

/// Leave-one-out view: train/val keep the reals and every other method,
/// test keeps the reals and only `held_out`.
pub fn loo_rows(rows: &[ManifestRow], held_out: &str) -> Vec<ManifestRow> {
    rows.iter()
        .filter(|r| match r.split {
            Split::Train | Split::Val => r.method != held_out,
            Split::Test => r.method == "real" || r.method == held_out,
        })
        .cloned()
        .collect()
}

/// Writes `clips/*.stn`, `manifest.jsonl` and, with two or more methods,
/// one `loo-<method>.jsonl` per method. Returns the manifest path.
pub fn build_manifest(spec: &DataSpec, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out = out_dir.as_ref();
    fs::create_dir_all(out.join("clips"))?;
    let items = generate(spec)?;
    for (row, clip) in &items {
        write_stn(&clip.video, out.join(&row.path))?;
    }
    let rows: Vec<ManifestRow> = items.into_iter().map(|(r, _)| r).collect();
    let path = out.join("manifest.jsonl");
    write_manifest(&rows, &path)?;
    if spec.methods.len() >= 2 {
        for m in &spec.methods {
            write_manifest(&loo_rows(&rows, m.as_str()), out.join(format!("loo-{m}.jsonl")))?;
        }
    }
    Ok(path)
}

/// Loads the clips of `rows`, resolving paths against `base`.
pub fn load_clips(base: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<Vec<Clip>> {
    let base = base.as_ref();
    rows.par_iter()
        .map(|row| {
            let video = read_stn(base.join(&row.path))?;
            if video.ndim() != 4 || video.shape()[0] != 3 {
                return Err(Error::Format(format!("{}: expected 3×T×H×W, got {:?}", row.path, video.shape())));
            }
            Ok(Clip {
                video,
                label: Label::from_value(row.label)?,
                method: row.method.clone(),
                video_id: row.video_id.clone(),
                seed: row.seed,
            })
        })
        .collect()
}
