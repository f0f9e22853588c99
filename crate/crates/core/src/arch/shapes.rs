use super::expand::{expand, ConvUnit, Unit};
use super::ArchSpec;
use crate::error::{shape_err, Result};
use crate::ops::{out_dim, PoolGeometry};

type Shape = [usize; 4];

fn conv_shape(conv: &ConvUnit, input: Shape, layer: &str) -> Result<Shape> {
    if input[0] != conv.cin {
        return shape_err(format!(
            "layer {layer}: {} expects {} channels, got {}",
            conv.name, conv.cin, input[0]
        ));
    }
    let mut out = [conv.cout, 0, 0, 0];
    for i in 0..3 {
        out[i + 1] = match out_dim(input[i + 1], conv.kernel[i], conv.stride[i], conv.padding[i]) {
            Some(d) => d,
            None => {
                return shape_err(format!(
                    "layer {layer}: {} produces an empty output from {input:?}",
                    conv.name
                ))
            }
        };
    }
    Ok(out)
}

fn pool_shape(geom: &PoolGeometry, input: Shape, layer: &str) -> Result<Shape> {
    match geom.output([input[1], input[2], input[3]]) {
        Some([t, h, w]) => Ok([input[0], t, h, w]),
        None => shape_err(format!(
            "layer {layer}: pool {:?} produces an empty output from {input:?}",
            geom.kernel
        )),
    }
}

/// Output shape (C, T, H, W) after every top-level layer.
pub fn infer_shapes(spec: &ArchSpec) -> Result<Vec<(String, Shape)>> {
    let mut shape = spec.input;
    let mut out = Vec::with_capacity(spec.layers.len());
    for unit in expand(spec) {
        let name = match &unit {
            Unit::Conv(c) => {
                shape = conv_shape(c, shape, &c.name)?;
                c.name.clone()
            }
            Unit::MaxPool { name, geom } => {
                shape = pool_shape(geom, shape, name)?;
                name.clone()
            }
            Unit::Bottleneck { name, blocks } => {
                for b in blocks {
                    let mut main = conv_shape(&b.a, shape, name)?;
                    main = conv_shape(&b.b, main, name)?;
                    if let Some(p) = &b.b_pool {
                        main = pool_shape(p, main, name)?;
                    }
                    main = conv_shape(&b.c, main, name)?;
                    let mut skip = shape;
                    if let Some(sc) = &b.shortcut {
                        skip = conv_shape(sc, skip, name)?;
                    }
                    if let Some(p) = &b.shortcut_pool {
                        skip = pool_shape(p, skip, name)?;
                    }
                    if main != skip {
                        return shape_err(format!(
                            "layer {name}: block {} residual {main:?} does not match shortcut {skip:?}",
                            b.name
                        ));
                    }
                    shape = main;
                }
                name.clone()
            }
            Unit::SpatialAvgPool { name } => {
                shape = [shape[0], shape[1], 1, 1];
                name.clone()
            }
        };
        out.push((name, shape));
    }
    Ok(out)
}

/// Final (C, T, H, W) of the network (the input shape for an empty spec).
pub fn output_shape(spec: &ArchSpec) -> Result<Shape> {
    Ok(infer_shapes(spec)?.last().map_or(spec.input, |(_, s)| *s))
}
