//! Architecture descriptions: a sequential list of stem convolutions,
//! pools, residual bottleneck groups and a final spatial average pool.
//!
//! The module provides the text format ([`parse_arch`] / [`render_arch`]),
//! the fully-temporal rewrite and its ablation variants, shape inference,
//! parameter counting and the canonical builders.

mod canonical;
mod describe;
mod expand;
mod parse;
mod shapes;
mod transform;

pub mod count;

pub use canonical::{build_canonical, build_canonical_scaled, sp_factor, CanonicalName, FULL_INPUT};
pub use count::{count_params, ParamCount};
pub use describe::{describe, DescribeReport};
pub use expand::{expand, Block, ConvUnit, Unit};
pub use parse::{parse_arch, render_arch};
pub use shapes::{infer_shapes, output_shape};
pub use transform::{apply_rule, ftcn_transform, normalize_pools, remove_spatial_pooling, variant_transform, Variant};

pub type Triple = [usize; 3];

/// How the first block of a bottleneck group downsamples spatially.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Downsample {
    /// The middle and shortcut convolutions carry the full stride.
    Strided,
    /// Convolutions keep only the temporal stride; a max pool with
    /// kernel = stride = (1, Sh, Sw) follows each of them.
    Pool,
}

/// Rounding of a max-pool output size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum PoolMode {
    #[default]
    Floor,
    /// `ceil(d / s)` outputs with zero padding; used by pools that replace
    /// a strided convolution so the output size matches it on odd inputs.
    Ceil,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BottleneckSpec {
    pub name: String,
    pub mid: usize,
    pub out: usize,
    pub repeat: usize,
    /// Kernel of the middle convolution (Kt×Kh×Kw).
    pub kernel: Triple,
    /// Stride applied by the first block.
    pub sdown: Triple,
    pub down: Downsample,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    Conv3d {
        name: String,
        out: usize,
        kernel: Triple,
        stride: Triple,
    },
    MaxPool3d {
        name: String,
        kernel: Triple,
        stride: Triple,
        mode: PoolMode,
    },
    Bottleneck(BottleneckSpec),
    SpatialAvgPool {
        name: String,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &str {
        match self {
            LayerSpec::Conv3d { name, .. }
            | LayerSpec::MaxPool3d { name, .. }
            | LayerSpec::SpatialAvgPool { name } => name,
            LayerSpec::Bottleneck(b) => &b.name,
        }
    }
}

/// Ordered layer list plus the declared input shape (C, T, H, W).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ArchSpec {
    pub input: [usize; 4],
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    pub fn new(input: [usize; 4]) -> Self {
        ArchSpec {
            input,
            layers: Vec::new(),
        }
    }

    pub fn with_input(mut self, input: [usize; 4]) -> Self {
        self.input = input;
        self
    }

    pub fn ends_with_spatial_pool(&self) -> bool {
        matches!(self.layers.last(), Some(LayerSpec::SpatialAvgPool { .. }))
    }
}
