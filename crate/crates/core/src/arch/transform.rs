use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use super::{ArchSpec, Downsample, LayerSpec, PoolMode, Triple};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Every kernel (Kt,Kh,Kw) becomes (1,Kh,Kw); strides are kept.
    Spatial,
    /// Kernels become (1,Kh,1); spatial strides move into pools.
    Fhcn,
    /// Kernels become (1,1,Kw); spatial strides move into pools.
    Fwcn,
    /// First conv of an FTCN becomes (5,3,3).
    Fk3,
    /// First conv of an FTCN becomes (5,5,5).
    Fk5,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Spatial, Variant::Fhcn, Variant::Fwcn, Variant::Fk3, Variant::Fk5];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Spatial => "spatial",
            Variant::Fhcn => "fhcn",
            Variant::Fwcn => "fwcn",
            Variant::Fk3 => "ftcn-fk3",
            Variant::Fk5 => "ftcn-fk5",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(Variant::Spatial),
            "fhcn" => Ok(Variant::Fhcn),
            "fwcn" => Ok(Variant::Fwcn),
            "fk3" | "ftcn-fk3" => Ok(Variant::Fk3),
            "fk5" | "ftcn-fk5" => Ok(Variant::Fk5),
            other => invalid(format!("unknown variant `{other}`")),
        }
    }
}

/// Rewrites every conv with `kernel_map` and drops its spatial stride,
/// inserting a ceil-mode pool (1,Sh,Sw) after it when Sh or Sw > 1.
fn strip_spatial(spec: &ArchSpec, kernel_map: impl Fn(Triple) -> Triple) -> ArchSpec {
    let mut taken: HashSet<String> = spec.layers.iter().map(|l| l.name().to_string()).collect();
    let mut layers = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv3d { name, out, kernel, stride } => {
                layers.push(LayerSpec::Conv3d {
                    name: name.clone(),
                    out: *out,
                    kernel: kernel_map(*kernel),
                    stride: [stride[0], 1, 1],
                });
                if stride[1] > 1 || stride[2] > 1 {
                    let mut pool_name = format!("{name}_pool");
                    let mut n = 2;
                    while taken.contains(&pool_name) {
                        pool_name = format!("{name}_pool{n}");
                        n += 1;
                    }
                    taken.insert(pool_name.clone());
                    let k = [1, stride[1], stride[2]];
                    layers.push(LayerSpec::MaxPool3d {
                        name: pool_name,
                        kernel: k,
                        stride: k,
                        mode: PoolMode::Ceil,
                    });
                }
            }
            LayerSpec::Bottleneck(b) => {
                let mut b = b.clone();
                b.kernel = kernel_map(b.kernel);
                if b.sdown[1] > 1 || b.sdown[2] > 1 {
                    b.down = Downsample::Pool;
                }
                layers.push(LayerSpec::Bottleneck(b));
            }
            other => layers.push(other.clone()),
        }
    }
    ArchSpec {
        input: spec.input,
        layers,
    }
}

/// Fully temporal rewrite: conv (Kt,Kh,Kw) stride (St,Sh,Sw) becomes
/// (Kt,1,1) stride (St,1,1), followed by a (1,Sh,Sw) max pool when the
/// spatial stride was above 1. Existing pools are left alone.
pub fn ftcn_transform(spec: &ArchSpec) -> ArchSpec {
    strip_spatial(spec, |k| [k[0], 1, 1])
}

pub fn variant_transform(spec: &ArchSpec, kind: Variant) -> Result<ArchSpec> {
    match kind {
        Variant::Spatial => {
            let mut out = spec.clone();
            for layer in &mut out.layers {
                match layer {
                    LayerSpec::Conv3d { kernel, .. } => kernel[0] = 1,
                    LayerSpec::Bottleneck(b) => b.kernel[0] = 1,
                    _ => {}
                }
            }
            Ok(out)
        }
        Variant::Fhcn => Ok(strip_spatial(spec, |k| [1, k[1], 1])),
        Variant::Fwcn => Ok(strip_spatial(spec, |k| [1, 1, k[2]])),
        Variant::Fk3 | Variant::Fk5 => {
            let s = if kind == Variant::Fk3 { 3 } else { 5 };
            let mut out = spec.clone();
            match out.layers.first_mut() {
                Some(LayerSpec::Conv3d { kernel, .. }) => {
                    *kernel = [5, s, s];
                    Ok(out)
                }
                _ => invalid(format!("{kind} needs a spec whose first layer is a conv")),
            }
        }
    }
}

/// Applies a rewrite by name: `ftcn`, `spatial`, `fhcn`, `fwcn`, `fk3` or `fk5`.
pub fn apply_rule(spec: &ArchSpec, rule: &str) -> Result<ArchSpec> {
    match rule {
        "ftcn" => Ok(ftcn_transform(spec)),
        "spatial" => variant_transform(spec, Variant::Spatial),
        "fhcn" => variant_transform(spec, Variant::Fhcn),
        "fwcn" => variant_transform(spec, Variant::Fwcn),
        "fk3" => variant_transform(spec, Variant::Fk3),
        "fk5" => variant_transform(spec, Variant::Fk5),
        other => invalid(format!("unknown rule `{other}`")),
    }
}

/// Drops all spatial downsampling: pools keep only their temporal kernel
/// and stride, strides of convs and bottleneck groups lose their spatial
/// part. On a fully temporal spec every layer then acts per pixel.
pub fn remove_spatial_pooling(spec: &ArchSpec) -> ArchSpec {
    let mut out = spec.clone();
    for layer in &mut out.layers {
        match layer {
            LayerSpec::Conv3d { stride, .. } => *stride = [stride[0], 1, 1],
            LayerSpec::MaxPool3d { kernel, stride, .. } => {
                *kernel = [kernel[0], 1, 1];
                *stride = [stride[0], 1, 1];
            }
            LayerSpec::Bottleneck(b) => {
                b.sdown = [b.sdown[0], 1, 1];
                b.down = Downsample::Strided;
            }
            LayerSpec::SpatialAvgPool { .. } => {}
        }
    }
    out
}

/// Canonical form for structural comparison: every maximal run of adjacent
/// max pools becomes one floor-mode pool with kernel = stride = the product
/// of the run's strides, named after the last pool in the run. Bottlenecks
/// without spatial downsampling get the default downsample mode.
pub fn normalize_pools(spec: &ArchSpec) -> ArchSpec {
    let mut layers: Vec<LayerSpec> = Vec::with_capacity(spec.layers.len());
    let mut run: Option<(String, Triple)> = None;
    let flush = |run: &mut Option<(String, Triple)>, layers: &mut Vec<LayerSpec>| {
        if let Some((name, s)) = run.take() {
            layers.push(LayerSpec::MaxPool3d {
                name,
                kernel: s,
                stride: s,
                mode: PoolMode::Floor,
            });
        }
    };
    for layer in &spec.layers {
        if let LayerSpec::MaxPool3d { name, stride, .. } = layer {
            let acc = run.as_ref().map_or([1, 1, 1], |r| r.1);
            run = Some((name.clone(), [acc[0] * stride[0], acc[1] * stride[1], acc[2] * stride[2]]));
        } else {
            flush(&mut run, &mut layers);
            let mut layer = layer.clone();
            if let LayerSpec::Bottleneck(b) = &mut layer {
                if b.sdown[1] == 1 && b.sdown[2] == 1 {
                    b.down = Downsample::Strided;
                }
            }
            layers.push(layer);
        }
    }
    flush(&mut run, &mut layers);
    ArchSpec {
        input: spec.input,
        layers,
    }
}
