use std::fmt;
use std::str::FromStr;

use super::count::count_params;
use super::transform::{variant_transform, Variant};
use super::{ArchSpec, BottleneckSpec, Downsample, LayerSpec, PoolMode};
use crate::error::{invalid, Error, Result};
use crate::model::HeadConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CanonicalName {
    Ftcn,
    R50,
    Spatial,
    Fhcn,
    Fwcn,
    Sp,
    Fk3,
    Fk5,
}

impl CanonicalName {
    pub const ALL: [CanonicalName; 8] = [
        CanonicalName::Ftcn,
        CanonicalName::R50,
        CanonicalName::Spatial,
        CanonicalName::Fhcn,
        CanonicalName::Fwcn,
        CanonicalName::Sp,
        CanonicalName::Fk3,
        CanonicalName::Fk5,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CanonicalName::Ftcn => "ftcn",
            CanonicalName::R50 => "r50",
            CanonicalName::Spatial => "spatial",
            CanonicalName::Fhcn => "fhcn",
            CanonicalName::Fwcn => "fwcn",
            CanonicalName::Sp => "sp",
            CanonicalName::Fk3 => "fk3",
            CanonicalName::Fk5 => "fk5",
        }
    }
}

impl fmt::Display for CanonicalName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CanonicalName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CanonicalName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .map_or_else(|| invalid(format!("unknown canonical architecture `{s}`")), Ok)
    }
}

pub const FULL_INPUT: [usize; 4] = [3, 32, 224, 224];

const STAGES: [(&str, usize, usize, usize); 4] =
    [("res2", 64, 256, 3), ("res3", 128, 512, 4), ("res4", 256, 1024, 6), ("res5", 512, 2048, 3)];

fn scale(c: usize, width_div: usize) -> usize {
    c.div_ceil(width_div).max(1)
}

fn stage(name: &str, mid: usize, out: usize, repeat: usize, kernel: [usize; 3], first: bool, down: Downsample) -> LayerSpec {
    LayerSpec::Bottleneck(BottleneckSpec {
        name: name.to_string(),
        mid,
        out,
        repeat,
        kernel,
        sdown: if first { [1, 1, 1] } else { [1, 2, 2] },
        down,
    })
}

fn ftcn(width_div: usize, input: [usize; 4]) -> ArchSpec {
    let mut layers = vec![
        LayerSpec::Conv3d {
            name: "conv1".into(),
            out: scale(64, width_div),
            kernel: [5, 1, 1],
            stride: [1, 1, 1],
        },
        LayerSpec::MaxPool3d {
            name: "pool1".into(),
            kernel: [1, 5, 5],
            stride: [1, 4, 4],
            mode: PoolMode::Floor,
        },
    ];
    push_stages(&mut layers, width_div, 1.0, [3, 1, 1], Downsample::Pool);
    ArchSpec { input, layers }
}

fn r50(width_div: usize, factor: f64, input: [usize; 4]) -> ArchSpec {
    let ch = |c: usize| ((scale(c, width_div) as f64 * factor).round() as usize).max(1);
    let mut layers = vec![
        LayerSpec::Conv3d {
            name: "conv1".into(),
            out: ch(64),
            kernel: [5, 7, 7],
            stride: [1, 2, 2],
        },
        LayerSpec::MaxPool3d {
            name: "pool1".into(),
            kernel: [1, 3, 3],
            stride: [1, 2, 2],
            mode: PoolMode::Floor,
        },
    ];
    push_stages(&mut layers, width_div, factor, [3, 3, 3], Downsample::Strided);
    ArchSpec { input, layers }
}

fn push_stages(layers: &mut Vec<LayerSpec>, width_div: usize, factor: f64, kernel: [usize; 3], down: Downsample) {
    let ch = |c: usize| ((scale(c, width_div) as f64 * factor).round() as usize).max(1);
    for (i, (name, mid, out, repeat)) in STAGES.into_iter().enumerate() {
        let down = if i == 0 { Downsample::Strided } else { down };
        layers.push(stage(name, ch(mid), ch(out), repeat, kernel, i == 0, down));
        if i == 0 {
            layers.push(LayerSpec::MaxPool3d {
                name: "pool2".into(),
                kernel: [2, 1, 1],
                stride: [2, 1, 1],
                mode: PoolMode::Floor,
            });
        }
    }
    layers.push(LayerSpec::SpatialAvgPool {
        name: "savgpool".into(),
    });
}

/// Uniform channel factor that brings the R50 backbone's parameter count
/// closest to the FTCN's, by bisection on the factor.
pub fn sp_factor(width_div: usize, input: [usize; 4]) -> f64 {
    let target = count_params(&ftcn(width_div, input), &HeadConfig::None).backbone as f64;
    let count = |f: f64| count_params(&r50(width_div, f, input), &HeadConfig::None).backbone as f64;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best = (f64::INFINITY, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let c = count(mid);
        let err = (c - target).abs();
        if err < best.0 {
            best = (err, mid);
        }
        if c < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best.1
}

/// Canonical architecture at full width and the default input 3×32×224×224.
pub fn build_canonical(name: CanonicalName) -> ArchSpec {
    build_canonical_scaled(name, 1, FULL_INPUT)
}

/// Canonical architecture with every channel count divided by `width_div`
/// (rounded up) and the given input shape.
pub fn build_canonical_scaled(name: CanonicalName, width_div: usize, input: [usize; 4]) -> ArchSpec {
    let width_div = width_div.max(1);
    let variant = |base: ArchSpec, v: Variant| variant_transform(&base, v).expect("canonical specs start with a conv");
    match name {
        CanonicalName::Ftcn => ftcn(width_div, input),
        CanonicalName::R50 => r50(width_div, 1.0, input),
        CanonicalName::Spatial => variant(r50(width_div, 1.0, input), Variant::Spatial),
        CanonicalName::Fhcn => variant(r50(width_div, 1.0, input), Variant::Fhcn),
        CanonicalName::Fwcn => variant(r50(width_div, 1.0, input), Variant::Fwcn),
        CanonicalName::Sp => r50(width_div, sp_factor(width_div, input), input),
        CanonicalName::Fk3 => variant(ftcn(width_div, input), Variant::Fk3),
        CanonicalName::Fk5 => variant(ftcn(width_div, input), Variant::Fk5),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{ftcn_transform, infer_shapes, normalize_pools, output_shape};

    #[test]
    fn ftcn_is_rewritten_r50() {
        let a = normalize_pools(&build_canonical(CanonicalName::Ftcn));
        let b = normalize_pools(&ftcn_transform(&build_canonical(CanonicalName::R50)));
        assert_eq!(a, b);
    }

    #[test]
    fn first_layer_is_temporal_stem() {
        let s = build_canonical(CanonicalName::Ftcn);
        assert!(matches!(&s.layers[0], LayerSpec::Conv3d { kernel: [5, 1, 1], out: 64, .. }));
    }

    #[test]
    fn every_variant_infers() {
        for n in CanonicalName::ALL {
            let s = build_canonical(n);
            let out = output_shape(&s).unwrap();
            assert_eq!(&out[1..], &[16, 1, 1], "{n}");
            assert!(infer_shapes(&s).is_ok());
        }
    }

    #[test]
    fn toy_feature_shape() {
        let s = build_canonical_scaled(CanonicalName::Ftcn, 16, [3, 16, 32, 32]);
        assert_eq!(output_shape(&s).unwrap(), [128, 8, 1, 1]);
    }

    #[test]
    fn sp_matches_ftcn_budget() {
        let target = count_params(&build_canonical(CanonicalName::Ftcn), &HeadConfig::None).backbone as f64;
        let sp = count_params(&build_canonical(CanonicalName::Sp), &HeadConfig::None).backbone as f64;
        assert!((sp - target).abs() / target < 0.02, "{sp} vs {target}");
    }

    #[test]
    fn names_round_trip() {
        for n in CanonicalName::ALL {
            assert_eq!(n.as_str().parse::<CanonicalName>().unwrap(), n);
        }
        assert!("r101".parse::<CanonicalName>().is_err());
    }
}
