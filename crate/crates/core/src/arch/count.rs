//! Parameter counting. Every conv is bias-free and followed by a batch
//! norm with a gain and a shift per output channel.

use super::expand::{expand, ConvUnit, Unit};
use super::ArchSpec;
use crate::model::{HeadConfig, TransformerConfig};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    /// Per top-level backbone layer, in order.
    pub layers: Vec<(String, usize)>,
    /// Per head component (empty for no head).
    pub head_parts: Vec<(String, usize)>,
    pub backbone: usize,
    pub head: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.backbone + self.head
    }
}

pub(crate) fn conv_unit_params(c: &ConvUnit) -> usize {
    c.weight_count() + 2 * c.cout
}

pub(crate) fn unit_params(u: &Unit) -> usize {
    match u {
        Unit::Conv(c) => conv_unit_params(c),
        Unit::Bottleneck { blocks, .. } => blocks.iter().flat_map(|b| b.convs()).map(conv_unit_params).sum(),
        Unit::MaxPool { .. } | Unit::SpatialAvgPool { .. } => 0,
    }
}

fn transformer_parts(t: &TransformerConfig) -> Vec<(String, usize)> {
    let d = t.dim;
    let mut parts = vec![
        ("projection".to_string(), d * t.feature_dim + d),
        ("class_token".to_string(), d),
        ("position".to_string(), (t.tokens + 1) * d),
    ];
    for l in 0..t.layers {
        parts.push((format!("block{l}"), t.block_params()));
    }
    parts.push(("final_norm".to_string(), 2 * d));
    parts.push(("classifier".to_string(), d + 1));
    parts
}

pub fn count_params(spec: &ArchSpec, head: &HeadConfig) -> ParamCount {
    let layers: Vec<(String, usize)> = expand(spec)
        .iter()
        .map(|u| {
            let name = match u {
                Unit::Conv(c) => c.name.clone(),
                Unit::MaxPool { name, .. } | Unit::Bottleneck { name, .. } | Unit::SpatialAvgPool { name } => {
                    name.clone()
                }
            };
            (name, unit_params(u))
        })
        .collect();
    let head_parts = match head {
        HeadConfig::None => Vec::new(),
        HeadConfig::Linear { feature_dim } => vec![("classifier".to_string(), feature_dim + 1)],
        HeadConfig::Transformer(t) => transformer_parts(t),
    };
    ParamCount {
        backbone: layers.iter().map(|(_, n)| n).sum(),
        head: head_parts.iter().map(|(_, n)| n).sum(),
        layers,
        head_parts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::parse_arch;

    #[test]
    fn identity_block_weights_by_hand() {
        // one non-first block: 256*64 + 3*64*64 + 64*256 conv weights
        let s = parse_arch("input c=256 t=4 h=4 w=4\nbottleneck mid=64 out=256 repeat=2 kt=3\n").unwrap();
        let units = expand(&s);
        let Unit::Bottleneck { blocks, .. } = &units[0] else { panic!() };
        let w: usize = blocks[1].convs().map(|c| c.weight_count()).sum();
        assert_eq!(w, 45_056);
        let n: usize = blocks[1].convs().map(conv_unit_params).sum();
        assert_eq!(n, 45_056 + 2 * (64 + 64 + 256));
    }

    #[test]
    fn head_parts_sum_to_config() {
        let t = TransformerConfig::default();
        let c = count_params(&ArchSpec::new([3, 1, 1, 1]), &HeadConfig::Transformer(t));
        assert_eq!(c.head, t.params());
        assert_eq!(c.backbone, 0);
    }
}
