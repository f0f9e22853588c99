use std::fmt::Write;

use super::count::{count_params, ParamCount};
use super::shapes::infer_shapes;
use super::{ArchSpec, Downsample, LayerSpec, Triple};
use crate::error::Result;
use crate::model::HeadConfig;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DescribeRow {
    pub name: String,
    pub layer: String,
    pub output: [usize; 4],
    pub params: usize,
    pub cumulative: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DescribeReport {
    pub input: [usize; 4],
    pub rows: Vec<DescribeRow>,
    pub counts: ParamCount,
    pub footnotes: Vec<String>,
}

fn tuple(t: &Triple, sep: char) -> String {
    format!("{}{sep}{}{sep}{}", t[0], t[1], t[2])
}

fn shape(s: &[usize; 4]) -> String {
    format!("{}x{}x{}x{}", s[0], s[1], s[2], s[3])
}

fn layer_text(layer: &LayerSpec) -> String {
    match layer {
        LayerSpec::Conv3d { out, kernel, stride, .. } => {
            format!("conv {}, {out}, stride {}", tuple(kernel, 'x'), tuple(stride, ','))
        }
        LayerSpec::MaxPool3d { kernel, stride, .. } => {
            format!("max pool {}, stride {}", tuple(kernel, 'x'), tuple(stride, ','))
        }
        LayerSpec::Bottleneck(b) => {
            let mut s = format!(
                "[1x1x1, {m}; {}, {m}; 1x1x1, {o}] x{}",
                tuple(&b.kernel, 'x'),
                b.repeat,
                m = b.mid,
                o = b.out
            );
            if b.sdown != [1, 1, 1] {
                let how = match b.down {
                    Downsample::Strided => "conv",
                    Downsample::Pool => "pool",
                };
                let _ = write!(s, ", down {} ({how})", tuple(&b.sdown, ','));
            }
            s
        }
        LayerSpec::SpatialAvgPool { .. } => "spatial avg pool".to_string(),
    }
}

/// Per-layer report: description, output size and cumulative parameters.
pub fn describe(spec: &ArchSpec, head: &HeadConfig) -> Result<DescribeReport> {
    let shapes = infer_shapes(spec)?;
    let counts = count_params(spec, head);
    let mut rows = Vec::with_capacity(spec.layers.len());
    let mut footnotes = Vec::new();
    let mut cumulative = 0;
    for ((layer, (name, output)), (_, params)) in spec.layers.iter().zip(&shapes).zip(&counts.layers) {
        cumulative += params;
        if name == "pool1" && matches!(layer, LayerSpec::MaxPool3d { .. }) && output[0] == 64 {
            footnotes.push(
                "pool1 outputs 64 channels. The published table lists 256 for this row, \
                 which cannot be right since pooling keeps the channel count of conv1 (64)."
                    .to_string(),
            );
        }
        rows.push(DescribeRow {
            name: name.clone(),
            layer: layer_text(layer),
            output: *output,
            params: *params,
            cumulative,
        });
    }
    Ok(DescribeReport {
        input: spec.input,
        rows,
        counts,
        footnotes,
    })
}

impl DescribeReport {
    pub fn to_text(&self) -> String {
        let header = ["layer", "description", "output", "params", "cumulative"];
        let mut table: Vec<[String; 5]> = vec![header.map(str::to_string)];
        for r in &self.rows {
            table.push([
                r.name.clone(),
                r.layer.clone(),
                shape(&r.output),
                r.params.to_string(),
                r.cumulative.to_string(),
            ]);
        }
        let mut width = [0; 5];
        for row in &table {
            for (w, cell) in width.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = format!("input {}\n", shape(&self.input));
        for row in &table {
            let line = format!(
                "{:<w0$}  {:<w1$}  {:<w2$}  {:>w3$}  {:>w4$}",
                row[0],
                row[1],
                row[2],
                row[3],
                row[4],
                w0 = width[0],
                w1 = width[1],
                w2 = width[2],
                w3 = width[3],
                w4 = width[4]
            );
            out.push_str(line.trim_end());
            out.push('\n');
        }
        let _ = writeln!(out, "backbone params: {}", self.counts.backbone);
        if !self.counts.head_parts.is_empty() {
            for (name, n) in &self.counts.head_parts {
                let _ = writeln!(out, "  head.{name}: {n}");
            }
            let _ = writeln!(out, "head params: {}", self.counts.head);
        }
        let _ = writeln!(out, "total params: {}", self.counts.total());
        for (i, note) in self.footnotes.iter().enumerate() {
            let _ = writeln!(out, "[{}] {note}", i + 1);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,description,c,t,h,w,params,cumulative\n");
        for r in &self.rows {
            let [c, t, h, w] = r.output;
            let _ = writeln!(
                out,
                "{},\"{}\",{c},{t},{h},{w},{},{}",
                r.name, r.layer, r.params, r.cumulative
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_canonical, CanonicalName};

    #[test]
    fn canonical_report_has_footnote_and_rows() {
        let r = describe(&build_canonical(CanonicalName::Ftcn), &HeadConfig::None).unwrap();
        assert_eq!(r.rows.len(), 8);
        assert_eq!(r.footnotes.len(), 1);
        let text = r.to_text();
        assert!(text.contains("64x32x56x56"));
        assert!(text.contains("[1]"));
        assert_eq!(r.to_csv().lines().count(), 9);
        assert_eq!(r.rows.last().unwrap().cumulative, r.counts.backbone);
    }
}
