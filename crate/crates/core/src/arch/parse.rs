//! Line-based architecture text format.
//!
//! ```text
//! input c=3 t=32 h=224 w=224
//! conv3d name=conv1 out=64 k=5x1x1 s=1x1x1
//! maxpool name=pool1 k=1x5x5 s=1x4x4
//! bottleneck name=res2 mid=64 out=256 repeat=3 kt=3 sdown=1x1x1
//! savgpool
//! ```
//!
//! `#` starts a comment. Names are optional and default to the keyword
//! plus the layer's 1-based position. Bottlenecks accept either `kt=<n>`
//! (kernel n×1×1) or a full `k=<t>x<h>x<w>`, and `down=conv|pool`
//! (default `conv`). Pools accept `mode=floor|ceil` (default `floor`).

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write;

use super::{ArchSpec, BottleneckSpec, Downsample, LayerSpec, PoolMode, Triple};
use crate::error::{Error, Result};

fn perr<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        message: message.into(),
    })
}

struct Fields<'a> {
    line: usize,
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn parse(line: usize, tokens: &[&'a str], allowed: &[&str]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for tok in tokens {
            let Some((k, v)) = tok.split_once('=') else {
                return perr(line, format!("expected key=value, got `{tok}`"));
            };
            if !allowed.contains(&k) {
                return perr(line, format!("unknown key `{k}`"));
            }
            if map.insert(k, v).is_some() {
                return perr(line, format!("key `{k}` given twice"));
            }
        }
        Ok(Fields { line, map })
    }

    fn opt_str(&self, key: &str) -> Option<&'a str> {
        self.map.get(key).copied()
    }

    fn count(&self, key: &str) -> Result<Option<usize>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => match v.parse::<usize>() {
                Ok(n) if n >= 1 => Ok(Some(n)),
                _ => perr(self.line, format!("`{key}` must be a positive integer, got `{v}`")),
            },
        }
    }

    fn req_count(&self, key: &str) -> Result<usize> {
        match self.count(key)? {
            Some(n) => Ok(n),
            None => perr(self.line, format!("missing `{key}=`")),
        }
    }

    fn triple(&self, key: &str) -> Result<Option<Triple>> {
        let Some(v) = self.map.get(key) else {
            return Ok(None);
        };
        let parts: Vec<&str> = v.split('x').collect();
        if parts.len() != 3 {
            return perr(self.line, format!("malformed tuple `{v}` for `{key}`, expected TxHxW"));
        }
        let mut out = [0; 3];
        for (o, p) in out.iter_mut().zip(&parts) {
            match p.parse::<usize>() {
                Ok(n) if n >= 1 => *o = n,
                _ => return perr(self.line, format!("malformed tuple `{v}` for `{key}`")),
            }
        }
        Ok(Some(out))
    }
}

pub fn parse_arch(text: &str) -> Result<ArchSpec> {
    let mut input: Option<[usize; 4]> = None;
    let mut layers = Vec::new();
    let mut names = HashSet::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let (keyword, rest) = (tokens[0], &tokens[1..]);

        if keyword == "input" {
            if input.is_some() {
                return perr(line_no, "duplicate `input` header");
            }
            let f = Fields::parse(line_no, rest, &["c", "t", "h", "w"])?;
            input = Some([
                f.req_count("c")?,
                f.req_count("t")?,
                f.req_count("h")?,
                f.req_count("w")?,
            ]);
            continue;
        }
        if input.is_none() {
            return perr(line_no, "the `input` header must come before any layer");
        }
        let position = layers.len() + 1;
        let layer = match keyword {
            "conv3d" => {
                let f = Fields::parse(line_no, rest, &["name", "out", "k", "s"])?;
                let Some(kernel) = f.triple("k")? else {
                    return perr(line_no, "missing `k=`");
                };
                LayerSpec::Conv3d {
                    name: f.opt_str("name").map_or(format!("conv{position}"), str::to_string),
                    out: f.req_count("out")?,
                    kernel,
                    stride: f.triple("s")?.unwrap_or([1, 1, 1]),
                }
            }
            "maxpool" => {
                let f = Fields::parse(line_no, rest, &["name", "k", "s", "mode"])?;
                let Some(kernel) = f.triple("k")? else {
                    return perr(line_no, "missing `k=`");
                };
                let mode = match f.opt_str("mode") {
                    None | Some("floor") => PoolMode::Floor,
                    Some("ceil") => PoolMode::Ceil,
                    Some(other) => return perr(line_no, format!("unknown pool mode `{other}`")),
                };
                LayerSpec::MaxPool3d {
                    name: f.opt_str("name").map_or(format!("pool{position}"), str::to_string),
                    kernel,
                    stride: f.triple("s")?.unwrap_or([1, 1, 1]),
                    mode,
                }
            }
            "bottleneck" => {
                let f = Fields::parse(
                    line_no,
                    rest,
                    &["name", "mid", "out", "repeat", "kt", "k", "sdown", "down"],
                )?;
                let kernel = match (f.count("kt")?, f.triple("k")?) {
                    (Some(_), Some(_)) => return perr(line_no, "give either `kt=` or `k=`, not both"),
                    (Some(kt), None) => [kt, 1, 1],
                    (None, Some(k)) => k,
                    (None, None) => return perr(line_no, "missing `kt=` or `k=`"),
                };
                let down = match f.opt_str("down") {
                    None | Some("conv") => Downsample::Strided,
                    Some("pool") => Downsample::Pool,
                    Some(other) => return perr(line_no, format!("unknown downsample `{other}`")),
                };
                LayerSpec::Bottleneck(BottleneckSpec {
                    name: f.opt_str("name").map_or(format!("res{position}"), str::to_string),
                    mid: f.req_count("mid")?,
                    out: f.req_count("out")?,
                    repeat: f.req_count("repeat")?,
                    kernel,
                    sdown: f.triple("sdown")?.unwrap_or([1, 1, 1]),
                    down,
                })
            }
            "savgpool" => {
                let f = Fields::parse(line_no, rest, &["name"])?;
                LayerSpec::SpatialAvgPool {
                    name: f.opt_str("name").map_or("savgpool".to_string(), str::to_string),
                }
            }
            other => return perr(line_no, format!("unknown keyword `{other}`")),
        };
        if !names.insert(layer.name().to_string()) {
            return perr(line_no, format!("duplicate layer name `{}`", layer.name()));
        }
        layers.push(layer);
    }

    match input {
        Some(input) => Ok(ArchSpec { input, layers }),
        None => perr(last_line.max(1), "missing `input` header"),
    }
}

fn triple(t: &Triple) -> String {
    format!("{}x{}x{}", t[0], t[1], t[2])
}

/// Canonical text form: every field explicit, one layer per line.
pub fn render_arch(spec: &ArchSpec) -> String {
    let [c, t, h, w] = spec.input;
    let mut out = format!("input c={c} t={t} h={h} w={w}\n");
    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv3d { name, out: o, kernel, stride } => {
                let _ = writeln!(
                    out,
                    "conv3d name={name} out={o} k={} s={}",
                    triple(kernel),
                    triple(stride)
                );
            }
            LayerSpec::MaxPool3d { name, kernel, stride, mode } => {
                let m = match mode {
                    PoolMode::Floor => "floor",
                    PoolMode::Ceil => "ceil",
                };
                let _ = writeln!(
                    out,
                    "maxpool name={name} k={} s={} mode={m}",
                    triple(kernel),
                    triple(stride)
                );
            }
            LayerSpec::Bottleneck(b) => {
                let down = match b.down {
                    Downsample::Strided => "conv",
                    Downsample::Pool => "pool",
                };
                let _ = writeln!(
                    out,
                    "bottleneck name={} mid={} out={} repeat={} k={} sdown={} down={down}",
                    b.name,
                    b.mid,
                    b.out,
                    b.repeat,
                    triple(&b.kernel),
                    triple(&b.sdown)
                );
            }
            LayerSpec::SpatialAvgPool { name } => {
                let _ = writeln!(out, "savgpool name={name}");
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_stem_conv() {
        let s = parse_arch("input c=3 t=32 h=224 w=224\nconv3d name=conv1 out=64 k=5x1x1 s=1x1x1\n").unwrap();
        assert_eq!(
            s.layers[0],
            LayerSpec::Conv3d {
                name: "conv1".into(),
                out: 64,
                kernel: [5, 1, 1],
                stride: [1, 1, 1]
            }
        );
    }

    #[test]
    fn empty_body_is_identity_network() {
        let s = parse_arch("# nothing but a header\ninput c=3 t=8 h=4 w=4\n").unwrap();
        assert!(s.layers.is_empty());
        assert_eq!(s.input, [3, 8, 4, 4]);
    }

    #[test]
    fn diagnostics_carry_line_numbers() {
        let cases = [
            ("input c=1 t=1 h=1 w=1\n\nfoo k=1x1x1\n", 3, "unknown keyword"),
            ("input c=1 t=1 h=1 w=1\nconv3d out=2 k=1x1\n", 2, "malformed tuple"),
            ("input c=1 t=1 h=1 w=1\nsavgpool name=a\nsavgpool name=a\n", 3, "duplicate"),
            ("input c=1 t=1 h=1 w=1\nconv3d out=2 k=1x1x1 pad=1\n", 2, "unknown key"),
            ("conv3d out=2 k=1x1x1\n", 1, "header"),
        ];
        for (text, line, needle) in cases {
            match parse_arch(text) {
                Err(Error::Parse { line: l, message }) => {
                    assert_eq!(l, line, "{text}");
                    assert!(message.contains(needle), "{message}");
                }
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn render_is_canonical() {
        let text = "input c=3 t=16 h=32 w=32\nconv3d out=4 k=5x1x1   # stem\nbottleneck mid=4 out=16 repeat=3 kt=3\nsavgpool\n";
        let once = render_arch(&parse_arch(text).unwrap());
        assert_eq!(render_arch(&parse_arch(&once).unwrap()), once);
        assert!(once.contains("bottleneck name=res2 mid=4 out=16 repeat=3 k=3x1x1 sdown=1x1x1 down=conv"));
    }
}
