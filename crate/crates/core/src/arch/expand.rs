use super::{ArchSpec, Downsample, LayerSpec, PoolMode, Triple};
use crate::ops::conv::same_padding;
use crate::ops::PoolGeometry;

/// One convolution followed by batch normalization (and optionally ReLU).
/// Parameters live under `<name>.weight`, `<name>.bn.gain`, `<name>.bn.shift`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvUnit {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: Triple,
    pub stride: Triple,
    pub padding: Triple,
    pub relu: bool,
}

impl ConvUnit {
    fn new(name: String, cin: usize, cout: usize, kernel: Triple, stride: Triple, relu: bool) -> Self {
        ConvUnit {
            name,
            cin,
            cout,
            kernel,
            stride,
            padding: same_padding(kernel),
            relu,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.cout * self.cin * self.kernel.iter().product::<usize>()
    }
}

/// One residual bottleneck: `a` (1×1×1 reduce) → `b` (middle kernel,
/// optional pool) → `c` (1×1×1 expand), plus an optional projection
/// shortcut with its own optional pool.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub a: ConvUnit,
    pub b: ConvUnit,
    pub b_pool: Option<PoolGeometry>,
    pub c: ConvUnit,
    pub shortcut: Option<ConvUnit>,
    pub shortcut_pool: Option<PoolGeometry>,
}

impl Block {
    pub fn convs(&self) -> impl Iterator<Item = &ConvUnit> {
        [&self.a, &self.b, &self.c].into_iter().chain(self.shortcut.as_ref())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Unit {
    Conv(ConvUnit),
    MaxPool { name: String, geom: PoolGeometry },
    Bottleneck { name: String, blocks: Vec<Block> },
    SpatialAvgPool { name: String },
}

pub(crate) fn pool_geometry(kernel: Triple, stride: Triple, mode: PoolMode) -> PoolGeometry {
    match mode {
        PoolMode::Floor => PoolGeometry::with_default_padding(kernel, stride),
        PoolMode::Ceil => PoolGeometry::new(kernel, stride, [0, 0, 0]).ceil(),
    }
}

/// Pool inserted after a convolution whose spatial stride was removed.
pub(crate) fn replacement_pool(stride: Triple) -> Option<PoolGeometry> {
    (stride[1] > 1 || stride[2] > 1).then(|| {
        let k = [1, stride[1], stride[2]];
        pool_geometry(k, k, PoolMode::Ceil)
    })
}

/// Expands bottleneck groups into their blocks and tracks channel counts.
pub fn expand(spec: &ArchSpec) -> Vec<Unit> {
    let mut channels = spec.input[0];
    let mut units = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv3d { name, out, kernel, stride } => {
                units.push(Unit::Conv(ConvUnit::new(name.clone(), channels, *out, *kernel, *stride, true)));
                channels = *out;
            }
            LayerSpec::MaxPool3d { name, kernel, stride, mode } => units.push(Unit::MaxPool {
                name: name.clone(),
                geom: pool_geometry(*kernel, *stride, *mode),
            }),
            LayerSpec::Bottleneck(g) => {
                let mut blocks = Vec::with_capacity(g.repeat);
                for i in 0..g.repeat {
                    let prefix = format!("{}.{i}", g.name);
                    let first = i == 0;
                    let cin = if first { channels } else { g.out };
                    let (conv_stride, pool) = match (first, g.down) {
                        (false, _) => ([1, 1, 1], None),
                        (true, Downsample::Strided) => (g.sdown, None),
                        (true, Downsample::Pool) => ([g.sdown[0], 1, 1], replacement_pool(g.sdown)),
                    };
                    let shortcut = first.then(|| {
                        ConvUnit::new(format!("{prefix}.shortcut"), cin, g.out, [1, 1, 1], conv_stride, false)
                    });
                    blocks.push(Block {
                        name: prefix.clone(),
                        a: ConvUnit::new(format!("{prefix}.a"), cin, g.mid, [1, 1, 1], [1, 1, 1], true),
                        b: ConvUnit::new(format!("{prefix}.b"), g.mid, g.mid, g.kernel, conv_stride, true),
                        b_pool: pool,
                        c: ConvUnit::new(format!("{prefix}.c"), g.mid, g.out, [1, 1, 1], [1, 1, 1], false),
                        shortcut,
                        shortcut_pool: pool,
                    });
                }
                units.push(Unit::Bottleneck {
                    name: g.name.clone(),
                    blocks,
                });
                channels = g.out;
            }
            LayerSpec::SpatialAvgPool { name } => units.push(Unit::SpatialAvgPool { name: name.clone() }),
        }
    }
    units
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::parse_arch;

    #[test]
    fn bottleneck_expansion_count() {
        let s = parse_arch("input c=64 t=8 h=8 w=8\nbottleneck mid=64 out=256 repeat=3 kt=3 sdown=1x1x1\n").unwrap();
        let units = expand(&s);
        let Unit::Bottleneck { blocks, .. } = &units[0] else { panic!() };
        let convs: usize = blocks.iter().map(|b| b.convs().count()).sum();
        let shortcuts = blocks.iter().filter(|b| b.shortcut.is_some()).count();
        assert_eq!(convs, 10);
        assert_eq!(shortcuts, 1);
    }
}
