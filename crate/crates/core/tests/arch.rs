use std::collections::HashSet;

use ftcnkit::arch::{
    build_canonical, count_params, describe, expand, ftcn_transform, infer_shapes, parse_arch, render_arch,
    variant_transform, ArchSpec, BottleneckSpec, CanonicalName, Downsample, LayerSpec, PoolMode, Unit, Variant,
};
use ftcnkit::model::{HeadConfig, TransformerConfig};
use proptest::prelude::*;

#[test]
fn full_ftcn_stage_shapes() {
    let shapes = infer_shapes(&build_canonical(CanonicalName::Ftcn)).unwrap();
    let expected = [
        ("conv1", [64, 32, 224, 224]),
        ("pool1", [64, 32, 56, 56]),
        ("res2", [256, 32, 56, 56]),
        ("pool2", [256, 16, 56, 56]),
        ("res3", [512, 16, 28, 28]),
        ("res4", [1024, 16, 14, 14]),
        ("res5", [2048, 16, 7, 7]),
        ("savgpool", [2048, 16, 1, 1]),
    ];
    let got: Vec<(&str, [usize; 4])> = shapes.iter().map(|(n, s)| (n.as_str(), *s)).collect();
    assert_eq!(got, expected);
}

#[test]
fn rewritten_r50_reaches_same_stage_shapes() {
    let ftcn = infer_shapes(&build_canonical(CanonicalName::Ftcn)).unwrap();
    let rewritten = infer_shapes(&ftcn_transform(&build_canonical(CanonicalName::R50))).unwrap();
    for (name, shape) in &ftcn {
        let hit = rewritten.iter().find(|(n, _)| n == name).unwrap();
        assert_eq!(&hit.1, shape, "{name}");
    }
}

#[test]
fn budget_near_reference() {
    let head = HeadConfig::Transformer(TransformerConfig::default());
    let c = count_params(&build_canonical(CanonicalName::Ftcn), &head);
    let rel = (c.total() as f64 - 26.6e6) / 26.6e6;
    assert!(rel.abs() <= 0.05, "{} params ({rel:+.4})", c.total());
}

#[test]
fn projection_without_bias_by_hand() {
    // the D×C projection alone, without its bias, is 1024·2048
    let t = TransformerConfig::default();
    let c = count_params(&ArchSpec::new([2048, 16, 1, 1]), &HeadConfig::Transformer(t));
    let proj = c.head_parts.iter().find(|(n, _)| n == "projection").unwrap().1;
    assert_eq!(proj - t.dim, 2_097_152);
}

#[test]
fn describe_reports_table() {
    let r = describe(&build_canonical(CanonicalName::Ftcn), &HeadConfig::None).unwrap();
    let text = r.to_text();
    for s in ["64x32x224x224", "64x32x56x56", "2048x16x1x1", "max pool 1x5x5, stride 1,4,4"] {
        assert!(text.contains(s), "missing {s}\n{text}");
    }
    assert!(r.to_csv().starts_with("name,description,c,t,h,w,params,cumulative\n"));
}

#[test]
fn spatial_variant_costs_more_on_r50() {
    let r50 = build_canonical(CanonicalName::R50);
    let sp = count_params(&variant_transform(&r50, Variant::Spatial).unwrap(), &HeadConfig::None);
    let ft = count_params(&ftcn_transform(&r50), &HeadConfig::None);
    assert!(sp.backbone >= ft.backbone);
}

fn odd_kernel() -> impl Strategy<Value = [usize; 3]> {
    prop::array::uniform3(prop::sample::select(vec![1usize, 3, 5, 7]))
}

fn stride() -> impl Strategy<Value = [usize; 3]> {
    prop::array::uniform3(1usize..=3)
}

fn layer() -> impl Strategy<Value = LayerSpec> {
    prop_oneof![
        (1usize..=6, odd_kernel(), stride()).prop_map(|(out, kernel, stride)| LayerSpec::Conv3d {
            name: String::new(),
            out,
            kernel,
            stride
        }),
        (prop::array::uniform3(1usize..=3), stride()).prop_map(|(kernel, stride)| LayerSpec::MaxPool3d {
            name: String::new(),
            kernel,
            stride,
            mode: PoolMode::Floor
        }),
        (1usize..=3, 1usize..=6, 1usize..=3, odd_kernel(), stride(), any::<bool>()).prop_map(
            |(mid, out, repeat, kernel, sdown, pool)| LayerSpec::Bottleneck(BottleneckSpec {
                name: String::new(),
                mid,
                out,
                repeat,
                kernel,
                sdown,
                down: if pool { Downsample::Pool } else { Downsample::Strided },
            })
        ),
    ]
}

fn arch() -> impl Strategy<Value = ArchSpec> {
    (
        prop::array::uniform4(1usize..=12),
        prop::collection::vec(layer(), 0..6),
        any::<bool>(),
    )
        .prop_map(|(input, mut layers, pool)| {
            for (i, l) in layers.iter_mut().enumerate() {
                match l {
                    LayerSpec::Conv3d { name, .. } => *name = format!("conv{i}"),
                    LayerSpec::MaxPool3d { name, .. } => *name = format!("pool{i}"),
                    LayerSpec::Bottleneck(b) => b.name = format!("res{i}"),
                    LayerSpec::SpatialAvgPool { name } => *name = format!("savg{i}"),
                }
            }
            if pool {
                layers.push(LayerSpec::SpatialAvgPool { name: "savgpool".into() });
            }
            ArchSpec { input, layers }
        })
        .prop_filter("shape inference must succeed", |s| infer_shapes(s).is_ok())
}

/// Shapes of the rewritten spec at the original layer boundaries: a conv
/// followed by an inserted pool reports the pool's output.
fn boundary_shapes(original: &ArchSpec, rewritten: &ArchSpec) -> Vec<[usize; 4]> {
    let names: HashSet<&str> = original.layers.iter().map(|l| l.name()).collect();
    let rows = infer_shapes(rewritten).unwrap();
    let mut out = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let mut shape = rows[i].1;
        while i + 1 < rows.len() && !names.contains(rows[i + 1].0.as_str()) {
            i += 1;
            shape = rows[i].1;
        }
        out.push(shape);
        i += 1;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn ftcn_rewrite_is_sound(spec in arch()) {
        let once = ftcn_transform(&spec);
        for unit in expand(&once) {
            let convs: Vec<_> = match &unit {
                Unit::Conv(c) => vec![c.clone()],
                Unit::Bottleneck { blocks, .. } => blocks.iter().flat_map(|b| b.convs().cloned()).collect(),
                _ => vec![],
            };
            for c in convs {
                prop_assert_eq!(&c.kernel[1..], &[1, 1]);
                prop_assert_eq!(&c.stride[1..], &[1, 1]);
            }
        }
        prop_assert_eq!(ftcn_transform(&once), once.clone());
        let before: Vec<_> = infer_shapes(&spec).unwrap().into_iter().map(|(_, s)| s).collect();
        prop_assert_eq!(boundary_shapes(&spec, &once), before);
    }

    #[test]
    fn render_parse_round_trip(spec in arch()) {
        let text = render_arch(&spec);
        prop_assert_eq!(parse_arch(&text).unwrap(), spec);
    }

    #[test]
    fn spatial_never_cheaper(spec in arch()) {
        // only holds when no conv is temporally deeper than it is spatially wide
        let kernels: Vec<[usize; 3]> = spec.layers.iter().filter_map(|l| match l {
            LayerSpec::Conv3d { kernel, .. } => Some(*kernel),
            LayerSpec::Bottleneck(b) => Some(b.kernel),
            _ => None,
        }).collect();
        prop_assume!(kernels.iter().any(|k| k[1] * k[2] > k[0]));
        prop_assume!(kernels.iter().all(|k| k[1] * k[2] >= k[0]));
        let sp = count_params(&variant_transform(&spec, Variant::Spatial).unwrap(), &HeadConfig::None);
        let ft = count_params(&ftcn_transform(&spec), &HeadConfig::None);
        prop_assert!(sp.backbone >= ft.backbone);
    }
}
