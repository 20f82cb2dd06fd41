use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{GROUP, VOCAB_SIZE};

/// Pooling factor of each outer level, outermost first.
pub const LEVEL_FACTORS: [usize; 2] = [4, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Plain causal transformer, every layer at full resolution.
    #[serde(rename = "PT")]
    Pt,
    /// One pooling level.
    #[serde(rename = "HG1")]
    Hg1,
    /// Two pooling levels, unlinked bottleneck.
    #[serde(rename = "HG2")]
    Hg2,
    /// Two levels, bottleneck links with unit scale.
    #[serde(rename = "HG2R")]
    Hg2R,
    /// Two levels, bottleneck links with learned per-channel scale.
    #[serde(rename = "HG2RL")]
    Hg2Rl,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Pt, Variant::Hg1, Variant::Hg2, Variant::Hg2R, Variant::Hg2Rl];

    /// Number of pooling levels.
    pub fn levels(self) -> usize {
        match self {
            Variant::Pt => 0,
            Variant::Hg1 => 1,
            _ => 2,
        }
    }

    pub fn linked(self) -> bool {
        matches!(self, Variant::Hg2R | Variant::Hg2Rl)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Pt => "PT",
            Variant::Hg1 => "HG1",
            Variant::Hg2 => "HG2",
            Variant::Hg2R => "HG2R",
            Variant::Hg2Rl => "HG2RL",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['+', '-', '_'], "").as_str() {
            "PT" => Ok(Variant::Pt),
            "HG1" => Ok(Variant::Hg1),
            "HG2" => Ok(Variant::Hg2),
            "HG2R" => Ok(Variant::Hg2R),
            "HG2RL" | "FULL" => Ok(Variant::Hg2Rl),
            _ => Err(Error::InvalidParams(format!("unknown model variant {s:?}"))),
        }
    }
}

/// How slots vacated by the pre-pooling shift are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryFill {
    #[default]
    Learned,
    Zero,
}

/// Switches that remove one of the two causal offsets. Only meaningful in
/// tests that demonstrate the offsets are necessary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ablation {
    #[serde(default)]
    pub no_pool_shift: bool,
    #[serde(default)]
    pub no_skip_offset: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub vocab: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// MLP hidden width as a multiple of `dim`.
    pub mlp_ratio: usize,
    /// Maximum full-resolution positions, conditioning prefix included.
    pub context: usize,
    /// Learned point-cloud queries; 0 disables conditioning.
    pub cond_queries: usize,
    /// Points expected by the conditioning encoder.
    pub cond_points: usize,
    pub boundary: BoundaryFill,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Published configuration: 24 layers, width 512, 16 heads.
    pub fn paper(context: usize) -> Self {
        Self {
            variant: Variant::Hg2Rl,
            vocab: VOCAB_SIZE,
            dim: 512,
            heads: 16,
            layers: 24,
            mlp_ratio: 4,
            context,
            cond_queries: 0,
            cond_points: 200,
            boundary: BoundaryFill::Learned,
            ablation: Ablation::default(),
        }
    }

    /// CPU-trainable defaults.
    pub fn desk() -> Self {
        Self {
            variant: Variant::Hg2Rl,
            vocab: VOCAB_SIZE,
            dim: 128,
            heads: 4,
            layers: 8,
            mlp_ratio: 4,
            context: crate::tokenizer::sequence_len(200),
            cond_queries: 0,
            cond_points: 200,
            boundary: BoundaryFill::Learned,
            ablation: Ablation::default(),
        }
    }

    /// Conditioning prefix length: queries rounded up to a multiple of 8.
    pub fn prefix_len(&self) -> usize {
        self.cond_queries.div_ceil(GROUP) * GROUP
    }

    pub fn levels(&self) -> usize {
        self.variant.levels()
    }

    pub fn factors(&self) -> &'static [usize] {
        &LEVEL_FACTORS[..self.levels()]
    }

    /// Layers at the innermost resolution.
    pub fn core_layers(&self) -> usize {
        self.layers - 2 * self.levels()
    }

    /// Right shift applied before pooling by `k`.
    pub fn pool_shift(&self, k: usize) -> usize {
        if self.ablation.no_pool_shift {
            0
        } else {
            k - 2
        }
    }

    /// `(layer, earlier_layer)` pairs of the bottleneck skip links.
    pub fn bottleneck_links(&self) -> Vec<(usize, usize)> {
        if !self.variant.linked() {
            return Vec::new();
        }
        let b = self.core_layers();
        (b - b / 2..b).map(|j| (j, b - 1 - j)).collect()
    }

    /// Layer count at each resolution, full resolution first then
    /// descending: `(divisor, layers)`.
    pub fn stage_layout(&self) -> Vec<(usize, usize)> {
        let mut stages = Vec::new();
        let mut div = 1;
        for &k in self.factors() {
            stages.push((div, 2));
            div *= k;
        }
        stages.push((div, self.core_layers()));
        stages
    }

    /// Attention-score work as a multiple of `L^2`: sum over layers of
    /// `(stage length / L)^2`.
    pub fn attention_cost_units(&self) -> f64 {
        self.stage_layout()
            .iter()
            .map(|&(div, n)| n as f64 / (div * div) as f64)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.vocab == 0 || self.dim == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return bad("vocab, dim, heads and mlp_ratio must be positive".into());
        }
        if !self.dim.is_multiple_of(self.heads) {
            return bad(format!("dim {} not divisible by heads {}", self.dim, self.heads));
        }
        if self.context == 0 || !self.context.is_multiple_of(GROUP) {
            return bad(format!("context {} must be a positive multiple of {GROUP}", self.context));
        }
        if self.layers < 2 * self.levels() + 1 {
            return bad(format!("{} needs at least {} layers", self.variant, 2 * self.levels() + 1));
        }
        if self.cond_queries > 0 && self.cond_points == 0 {
            return bad("conditioning needs at least one point".into());
        }
        if self.prefix_len() + GROUP > self.context {
            return bad("conditioning prefix leaves no room for tokens".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_cost_matches_stage_count() {
        let mut c = ModelConfig::paper(1616);
        c.variant = Variant::Pt;
        assert_eq!(c.attention_cost_units(), 24.0);
        c.variant = Variant::Hg2Rl;
        assert_eq!(c.attention_cost_units(), 2.4375);
        c.variant = Variant::Hg1;
        assert_eq!(c.attention_cost_units(), 2.0 + 22.0 / 16.0);
    }

    #[test]
    fn paper_links_pair_mirrored_layers() {
        let c = ModelConfig::paper(1616);
        let links = c.bottleneck_links();
        assert_eq!(links.len(), 10);
        assert_eq!(links[0], (10, 9));
        assert_eq!(links[9], (19, 0));
    }

    #[test]
    fn prefix_rounds_up() {
        let c = ModelConfig { cond_queries: 50, ..ModelConfig::desk() };
        assert_eq!(c.prefix_len(), 56);
    }

    #[test]
    fn variant_parse_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("HG2+R+L".parse::<Variant>().unwrap(), Variant::Hg2Rl);
    }
}
