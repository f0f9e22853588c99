use crate::error::{invalid, Result};
use crate::kv::{kv_usize, parse_kv};

/// Temporal transformer dimensions. `tokens` (N) and `feature_dim` (C)
/// describe the backbone output the transformer consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransformerConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_dim: usize,
    pub tokens: usize,
    pub feature_dim: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            layers: 1,
            dim: 1024,
            heads: 12,
            head_dim: 64,
            mlp_dim: 2048,
            tokens: 16,
            feature_dim: 2048,
        }
    }
}

impl TransformerConfig {
    pub fn inner_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("layers", self.layers),
            ("dim", self.dim),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("mlp_dim", self.mlp_dim),
            ("tokens", self.tokens),
            ("feature_dim", self.feature_dim),
        ];
        for (name, v) in fields {
            if v == 0 {
                return invalid(format!("transformer {name} must be at least 1"));
            }
        }
        Ok(())
    }

    /// Parameter count of one encoder block.
    pub fn block_params(&self) -> usize {
        let (d, inner, m) = (self.dim, self.inner_dim(), self.mlp_dim);
        let ln = 2 * d;
        let attn = 3 * d * inner + inner * d + d;
        let mlp = d * m + m + m * d + d;
        2 * ln + attn + mlp
    }

    /// Projection, class token, position embeddings, blocks, final norm
    /// and the D→1 head.
    pub fn params(&self) -> usize {
        let d = self.dim;
        let proj = d * self.feature_dim + d;
        let cls = d;
        let pos = (self.tokens + 1) * d;
        proj + cls + pos + self.layers * self.block_params() + 2 * d + d + 1
    }
}

/// Classifier on top of the backbone's feature sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadConfig {
    /// No head; counts and forward stop at the features.
    None,
    /// Mean over the N time steps, then a linear C→1 logit.
    Linear { feature_dim: usize },
    Transformer(TransformerConfig),
}

impl HeadConfig {
    pub fn params(&self) -> usize {
        match self {
            HeadConfig::None => 0,
            HeadConfig::Linear { feature_dim } => feature_dim + 1,
            HeadConfig::Transformer(t) => t.params(),
        }
    }
}

impl HeadConfig {
    pub fn to_text(&self) -> String {
        match self {
            HeadConfig::None => "head=none\n".to_string(),
            HeadConfig::Linear { feature_dim } => format!("head=linear\nfeature_dim={feature_dim}\n"),
            HeadConfig::Transformer(t) => format!(
                "head=transformer\nlayers={}\ndim={}\nheads={}\nhead_dim={}\nmlp_dim={}\ntokens={}\nfeature_dim={}\n",
                t.layers, t.dim, t.heads, t.head_dim, t.mlp_dim, t.tokens, t.feature_dim
            ),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let map = parse_kv(text)?;
        let allowed: &[&str] = match map.get("head").map(String::as_str) {
            Some("none") => &["head"],
            Some("linear") => &["head", "feature_dim"],
            Some("transformer") => &["head", "layers", "dim", "heads", "head_dim", "mlp_dim", "tokens", "feature_dim"],
            Some(other) => return invalid(format!("unknown head `{other}`")),
            None => return invalid("missing `head`"),
        };
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return invalid(format!("unknown head key `{k}`"));
        }
        Ok(match map["head"].as_str() {
            "none" => HeadConfig::None,
            "linear" => HeadConfig::Linear {
                feature_dim: kv_usize(&map, "feature_dim")?,
            },
            _ => {
                let t = TransformerConfig {
                    layers: kv_usize(&map, "layers")?,
                    dim: kv_usize(&map, "dim")?,
                    heads: kv_usize(&map, "heads")?,
                    head_dim: kv_usize(&map, "head_dim")?,
                    mlp_dim: kv_usize(&map, "mlp_dim")?,
                    tokens: kv_usize(&map, "tokens")?,
                    feature_dim: kv_usize(&map, "feature_dim")?,
                };
                t.validate()?;
                HeadConfig::Transformer(t)
            }
        })
    }
}
