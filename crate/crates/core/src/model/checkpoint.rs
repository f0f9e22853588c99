//! Checkpoints: a directory with `arch.txt`, `head.txt`, `manifest.txt`
//! (one `kind name shape file` line per tensor) and one STN1 file per
//! tensor; or a single bundle file holding the same content.
//!
//! Bundle layout: `FTCB`, u32 LE header length, a JSON header with the
//! architecture text, head text and an index of (kind, name, offset,
//! length), then the STN1 blobs back to back.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HeadConfig, Model};
use crate::arch::{parse_arch, render_arch};
use crate::error::{Error, Result};
use crate::ops::RunningStats;
use crate::params::ParamStore;
use crate::tensor::io::{read_stn, read_stn_from, write_stn, write_stn_to};
use crate::tensor::Tensor;

const BUNDLE_MAGIC: &[u8; 4] = b"FTCB";

fn fmt_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

/// (kind, name, tensor) triples in a fixed order.
fn entries(model: &Model<f32>) -> Vec<(&'static str, String, &Tensor<f32>)> {
    let mut out: Vec<_> = model.params().iter().map(|(n, t)| ("param", n.clone(), t)).collect();
    for (name, r) in model.running() {
        out.push(("running_mean", name.clone(), &r.mean));
        out.push(("running_var", name.clone(), &r.var));
    }
    out
}

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn file_name(kind: &str, name: &str) -> String {
    match kind {
        "param" => format!("{name}.stn"),
        _ => format!("{name}.bn.{kind}.stn"),
    }
}

fn assemble(
    arch_text: &str,
    head_text: &str,
    tensors: Vec<(String, String, Tensor<f32>)>,
) -> Result<Model<f32>> {
    let arch = parse_arch(arch_text)?;
    let head = HeadConfig::parse(head_text)?;
    let mut params = ParamStore::new();
    let mut means = BTreeMap::new();
    let mut vars = BTreeMap::new();
    for (kind, name, t) in tensors {
        match kind.as_str() {
            "param" => params.insert(name, t),
            "running_mean" => {
                means.insert(name, t);
            }
            "running_var" => {
                vars.insert(name, t);
            }
            other => return fmt_err(format!("unknown tensor kind `{other}`")),
        }
    }
    let mut running = BTreeMap::new();
    for (name, mean) in means {
        let Some(var) = vars.remove(&name) else {
            return fmt_err(format!("running variance missing for {name}"));
        };
        running.insert(name, RunningStats { mean, var });
    }
    Model::from_parts(arch, head, params, running)
}

pub fn save_checkpoint(model: &Model<f32>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("tensors"))?;
    fs::write(dir.join("arch.txt"), render_arch(model.arch()))?;
    fs::write(dir.join("head.txt"), model.head().to_text())?;
    let mut manifest = String::new();
    for (kind, name, t) in entries(model) {
        let file = file_name(kind, &name);
        write_stn(t, dir.join("tensors").join(&file))?;
        manifest.push_str(&format!("{kind} {name} {} tensors/{file}\n", shape_text(t.shape())));
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Model<f32>> {
    let dir = dir.as_ref();
    let arch = fs::read_to_string(dir.join("arch.txt"))?;
    let head = fs::read_to_string(dir.join("head.txt"))?;
    let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
    let mut tensors = Vec::new();
    for (i, line) in manifest.lines().enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [kind, name, shape, file] = parts[..] else {
            return fmt_err(format!("manifest line {} malformed: `{line}`", i + 1));
        };
        let t: Tensor<f32> = read_stn(dir.join(file))?;
        if shape_text(t.shape()) != shape {
            return fmt_err(format!("{file}: manifest says {shape}, file holds {:?}", t.shape()));
        }
        tensors.push((kind.to_string(), name.to_string(), t));
    }
    assemble(&arch, &head, tensors)
}

#[derive(Serialize, Deserialize)]
struct BundleEntry {
    kind: String,
    name: String,
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    arch: String,
    head: String,
    entries: Vec<BundleEntry>,
}

pub fn save_bundle(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let mut blobs = Vec::new();
    let mut index = Vec::new();
    for (kind, name, t) in entries(model) {
        let start = blobs.len() as u64;
        write_stn_to(t, &mut blobs)?;
        index.push(BundleEntry {
            kind: kind.to_string(),
            name,
            offset: start,
            len: blobs.len() as u64 - start,
        });
    }
    let header = serde_json::to_vec(&BundleHeader {
        arch: render_arch(model.arch()),
        head: model.head().to_text(),
        entries: index,
    })?;
    let mut f = fs::File::create(path)?;
    f.write_all(BUNDLE_MAGIC)?;
    f.write_all(&(header.len() as u32).to_le_bytes())?;
    f.write_all(&header)?;
    f.write_all(&blobs)?;
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<Model<f32>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[..4] != BUNDLE_MAGIC {
        return fmt_err("not a model bundle (bad magic)");
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let Some(hbytes) = bytes.get(8..8 + hlen) else {
        return fmt_err("bundle header truncated");
    };
    let header: BundleHeader = serde_json::from_slice(hbytes)?;
    let payload = &bytes[8 + hlen..];
    let mut tensors = Vec::new();
    for e in header.entries {
        let (a, b) = (e.offset as usize, (e.offset + e.len) as usize);
        let Some(blob) = payload.get(a..b) else {
            return fmt_err(format!("bundle entry {} out of range", e.name));
        };
        tensors.push((e.kind, e.name, read_stn_from(blob)?));
    }
    assemble(&header.arch, &header.head, tensors)
}
