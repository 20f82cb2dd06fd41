//! Quantization of branch values into 256 bins per channel, and the framed
//! token layout: 8 SOS, 8 value tokens per branch, 8 EOS, then PAD.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::ordering::{order_tree, BranchPermutation, OrderStrategy};
use crate::tree::{Branch, GrowthSequence, TreeSkeleton, GROWTH_STAGES};

pub type Token = u16;

pub const VALUE_BINS: usize = 256;
pub const SOS: Token = 256;
pub const EOS: Token = 257;
pub const PAD: Token = 258;
pub const VOCAB_SIZE: usize = 259;
/// Tokens per branch, and the width of every SOS/EOS frame.
pub const GROUP: usize = 8;

/// Sequence length for a single tree with at most `n_max` branches.
pub const fn sequence_len(n_max: usize) -> usize {
    GROUP * (n_max + 2)
}

pub fn is_value(t: Token) -> bool {
    (t as usize) < VALUE_BINS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Coord,
    Radius,
}

impl Channel {
    /// Channel of the value at offset `k` inside a branch group.
    pub fn at_offset(k: usize) -> Self {
        if k % 4 == 3 {
            Channel::Radius
        } else {
            Channel::Coord
        }
    }
}

/// Per-channel bin edges. Coordinates use 256 uniform bins over [-1, 1];
/// radii use equal-frequency bins fitted on a corpus.
#[derive(Debug)]
pub struct Quantizer {
    coord_edges: Vec<f64>,
    radius_edges: Vec<f64>,
    pub provenance: String,
    clamped: AtomicU64,
}

impl Clone for Quantizer {
    fn clone(&self) -> Self {
        Self {
            coord_edges: self.coord_edges.clone(),
            radius_edges: self.radius_edges.clone(),
            provenance: self.provenance.clone(),
            clamped: AtomicU64::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for Quantizer {
    fn eq(&self, other: &Self) -> bool {
        self.coord_edges == other.coord_edges
            && self.radius_edges == other.radius_edges
            && self.provenance == other.provenance
    }
}

fn uniform_edges(lo: f64, hi: f64) -> Vec<f64> {
    let mut e: Vec<f64> = (0..=VALUE_BINS)
        .map(|i| lo + (hi - lo) * i as f64 / VALUE_BINS as f64)
        .collect();
    e[VALUE_BINS] = hi;
    e
}

/// Linear-interpolated quantiles at i/256 of an ascending slice.
fn quantile_edges(sorted: &[f64]) -> Vec<f64> {
    let last = (sorted.len() - 1) as f64;
    (0..=VALUE_BINS)
        .map(|i| {
            let pos = last * i as f64 / VALUE_BINS as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        })
        .collect()
}

fn strictly_increasing(e: &[f64]) -> bool {
    e.windows(2).all(|w| w[0] < w[1])
}

impl Quantizer {
    pub fn from_edges(coord_edges: Vec<f64>, radius_edges: Vec<f64>, provenance: String) -> Result<Self> {
        for (name, e) in [("coord", &coord_edges), ("radius", &radius_edges)] {
            if e.len() != VALUE_BINS + 1 || !strictly_increasing(e) {
                return Err(Error::Format(format!(
                    "{name} edges must be {} strictly increasing values",
                    VALUE_BINS + 1
                )));
            }
        }
        Ok(Self {
            coord_edges,
            radius_edges,
            provenance,
            clamped: AtomicU64::new(0),
        })
    }

    /// Fits radius bins on the corpus. Equal-frequency edges are used when
    /// the corpus has at least 256 distinct radii; otherwise uniform bins
    /// over the observed range.
    pub fn fit(corpus: &[TreeSkeleton]) -> Result<Self> {
        let mut radii: Vec<f64> = corpus
            .iter()
            .flat_map(|t| t.branches.iter().flat_map(|b| [b.s.r, b.t.r]))
            .collect();
        if radii.is_empty() {
            return Err(Error::InvalidParams("cannot fit a quantizer on an empty corpus".into()));
        }
        if radii.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::InvalidParams("corpus contains non-positive radii".into()));
        }
        radii.sort_by(f64::total_cmp);
        let (lo, hi) = (radii[0], radii[radii.len() - 1]);
        let mut distinct = radii.clone();
        distinct.dedup();

        let (radius_edges, rule) = if distinct.len() >= VALUE_BINS {
            let e = quantile_edges(&radii);
            if strictly_increasing(&e) {
                (e, "quantile")
            } else {
                (quantile_edges(&distinct), "quantile-distinct")
            }
        } else if hi > lo {
            (uniform_edges(lo, hi), "uniform-fallback")
        } else {
            // a single radius value: widen symmetrically so bins are nonempty
            (uniform_edges(lo * 0.5, lo * 1.5), "uniform-fallback")
        };
        Self::from_edges(
            uniform_edges(-1.0, 1.0),
            radius_edges,
            format!("{rule}; trees={}; radii={}; distinct={}", corpus.len(), radii.len(), distinct.len()),
        )
    }

    pub fn edges(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::Coord => &self.coord_edges,
            Channel::Radius => &self.radius_edges,
        }
    }

    pub fn bin_width(&self, channel: Channel, k: usize) -> f64 {
        let e = self.edges(channel);
        e[k + 1] - e[k]
    }

    /// Uses the radius-edge rule recorded at fit time.
    pub fn radius_rule(&self) -> &str {
        self.provenance.split(';').next().unwrap_or("")
    }

    /// Bin `k` with `edges[k] <= v < edges[k + 1]`; the top edge belongs to
    /// the last bin. Out-of-range values are clamped and counted.
    pub fn quantize(&self, v: f64, channel: Channel) -> Token {
        let e = self.edges(channel);
        if v.is_nan() || v < e[0] {
            self.clamped.fetch_add(1, Ordering::Relaxed);
            return 0;
        }
        if v >= e[VALUE_BINS] {
            if v > e[VALUE_BINS] {
                self.clamped.fetch_add(1, Ordering::Relaxed);
            }
            return (VALUE_BINS - 1) as Token;
        }
        let k = e.partition_point(|&edge| edge <= v) - 1;
        k.min(VALUE_BINS - 1) as Token
    }

    /// Bin midpoint.
    pub fn dequantize(&self, token: Token, channel: Channel) -> f64 {
        let e = self.edges(channel);
        let k = (token as usize).min(VALUE_BINS - 1);
        0.5 * (e[k] + e[k + 1])
    }

    /// Number of values clamped into range so far.
    pub fn clamp_count(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    pub fn quantize_branch(&self, b: &Branch) -> [Token; GROUP] {
        let v = b.to_values();
        std::array::from_fn(|k| self.quantize(v[k], Channel::at_offset(k)))
    }

    pub fn dequantize_group(&self, g: &[Token]) -> Branch {
        let v: [f64; GROUP] = std::array::from_fn(|k| self.dequantize(g[k], Channel::at_offset(k)));
        Branch::from_values(&v)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# hgtree quantizer v1\n");
        let _ = writeln!(s, "provenance {}", self.provenance);
        for (name, e) in [("coord", &self.coord_edges), ("radius", &self.radius_edges)] {
            s.push_str(name);
            for v in e {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut provenance = String::new();
        let mut coord = None;
        let mut radius = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (head, rest) = line.split_once(' ').unwrap_or((line, ""));
            let parse = || -> Result<Vec<f64>> {
                rest.split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| Error::Format(format!("edge '{t}': {e}"))))
                    .collect()
            };
            match head {
                "provenance" => provenance = rest.to_string(),
                "coord" => coord = Some(parse()?),
                "radius" => radius = Some(parse()?),
                other => return Err(Error::Format(format!("unknown quantizer record '{other}'"))),
            }
        }
        match (coord, radius) {
            (Some(c), Some(r)) => Self::from_edges(c, r, provenance),
            _ => Err(Error::Format("quantizer file needs coord and radius records".into())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
    pub n_branches: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Whitespace-separated ids, for debugging.
    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens = text
            .split_whitespace()
            .map(|t| match t.parse::<Token>() {
                Ok(v) if (v as usize) < VOCAB_SIZE => Ok(v),
                _ => Err(Error::Format(format!("bad token '{t}'"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let n_branches = tokens.iter().filter(|&&t| is_value(t)).count() / GROUP;
        Ok(Self { tokens, n_branches })
    }

    /// Length after dropping trailing PAD, rounded up to a multiple of 8.
    pub fn trimmed_len(&self) -> usize {
        let used = self.tokens.iter().rposition(|&t| t != PAD).map_or(0, |p| p + 1);
        used.div_ceil(GROUP) * GROUP
    }
}

/// Frames branches in `perm` order, no padding.
fn frame_tokens(tree: &TreeSkeleton, perm: &BranchPermutation, q: &Quantizer, out: &mut Vec<Token>) {
    out.extend([SOS; GROUP]);
    for &i in &perm.order {
        out.extend(q.quantize_branch(&tree.branches[i]));
    }
    out.extend([EOS; GROUP]);
}

/// Emits `8 SOS, branches in perm order, 8 EOS, PAD` with total length
/// `8 * (n_max + 2)`.
pub fn tokenize(
    tree: &TreeSkeleton,
    perm: &BranchPermutation,
    q: &Quantizer,
    n_max: usize,
) -> Result<TokenSequence> {
    if tree.len() > n_max {
        return Err(Error::Capacity(format!(
            "tree has {} branches but n_max is {n_max}",
            tree.len()
        )));
    }
    if perm.order.len() != tree.len() || !perm.is_permutation() {
        return Err(Error::InvalidParams("permutation does not match the tree".into()));
    }
    let total = sequence_len(n_max);
    let mut tokens = Vec::with_capacity(total);
    frame_tokens(tree, perm, q, &mut tokens);
    tokens.resize(total, PAD);
    Ok(TokenSequence {
        tokens,
        n_branches: tree.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detokenized {
    pub tree: TreeSkeleton,
    /// Groups discarded because they contained a special token or were cut short.
    pub dropped_groups: usize,
    /// Groups discarded because both endpoints fell in the same bins.
    pub degenerate_groups: usize,
}

/// Reads branch groups after the leading SOS block until a special token at
/// a group boundary. Malformed groups are skipped and counted.
pub fn detokenize(tokens: &[Token], q: &Quantizer) -> Result<Detokenized> {
    let start = tokens.iter().position(|&t| t != SOS).unwrap_or(tokens.len());
    if start == 0 {
        return Err(Error::Format("token sequence does not begin with SOS".into()));
    }
    let mut branches = Vec::new();
    let mut dropped = 0;
    let mut degenerate = 0;
    let mut p = start;
    while p < tokens.len() {
        if !is_value(tokens[p]) {
            break;
        }
        let Some(group) = tokens.get(p..p + GROUP) else {
            dropped += 1;
            break;
        };
        if group.iter().all(|&t| is_value(t)) {
            let b = q.dequantize_group(group);
            if b.validate().is_ok() {
                branches.push(b);
            } else {
                degenerate += 1;
            }
        } else {
            dropped += 1;
        }
        p += GROUP;
    }
    if branches.is_empty() {
        return Err(Error::EmptyGeneration);
    }
    Ok(Detokenized {
        tree: TreeSkeleton::new(branches),
        dropped_groups: dropped,
        degenerate_groups: degenerate,
    })
}

/// Capacity plan for growth sequences: a branch budget per stage and a total
/// padded length in groups of 8.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GrowthLayout {
    pub stage_n_max: Vec<usize>,
    pub total_groups: usize,
}

impl GrowthLayout {
    /// 1027 groups of 8 tokens, each stage capped at the elm budget.
    pub fn paper() -> Self {
        Self {
            stage_n_max: vec![200; GROWTH_STAGES],
            total_groups: 1027,
        }
    }

    /// Exactly enough room for the given per-stage budgets.
    pub fn fitted(stage_n_max: Vec<usize>) -> Self {
        let total_groups = stage_n_max.iter().map(|n| n + 2).sum();
        Self {
            stage_n_max,
            total_groups,
        }
    }

    pub fn total_len(&self) -> usize {
        self.total_groups * GROUP
    }
}

/// Concatenates the ten framed stage token lists chronologically and pads
/// to the layout's total length.
pub fn tokenize_growth(
    gs: &GrowthSequence,
    strategy: OrderStrategy,
    eps_connect: f64,
    q: &Quantizer,
    layout: &GrowthLayout,
) -> Result<TokenSequence> {
    if layout.stage_n_max.len() != gs.stages.len() {
        return Err(Error::InvalidParams(format!(
            "layout has {} stage budgets for {} stages",
            layout.stage_n_max.len(),
            gs.stages.len()
        )));
    }
    let mut tokens = Vec::with_capacity(layout.total_len());
    for (k, (stage, &budget)) in gs.stages.iter().zip(&layout.stage_n_max).enumerate() {
        if stage.len() > budget {
            return Err(Error::Capacity(format!(
                "stage {k} has {} branches, budget {budget}",
                stage.len()
            )));
        }
        let perm = order_tree(stage, strategy, eps_connect)?;
        frame_tokens(stage, &perm, q, &mut tokens);
        if tokens.len() > layout.total_len() {
            return Err(Error::Capacity(format!(
                "stage {k} overflows the total length of {} tokens",
                layout.total_len()
            )));
        }
    }
    tokens.resize(layout.total_len(), PAD);
    Ok(TokenSequence {
        tokens,
        n_branches: gs.final_stage().len(),
    })
}

/// Splits a growth token stream into per-stage frames (SOS block through
/// EOS block inclusive). Stops at PAD or at an unterminated frame.
pub fn split_stage_frames(tokens: &[Token]) -> Vec<&[Token]> {
    let mut frames = Vec::new();
    let mut p = 0;
    while p + GROUP <= tokens.len() && tokens[p] == SOS {
        let body = p + tokens[p..].iter().take_while(|&&t| t == SOS).count();
        let Some(end) = (body..tokens.len()).step_by(GROUP).find(|&i| !is_value(tokens[i])) else {
            break;
        };
        if tokens[end] != EOS {
            break;
        }
        let stop = (end + GROUP).min(tokens.len());
        frames.push(&tokens[p..stop]);
        p = stop;
    }
    frames
}

/// Which target positions count toward the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMasking {
    /// Value tokens plus the first token of each EOS frame.
    #[default]
    ValuesAndFirstEos,
    /// Every non-PAD token after the first position.
    AllNonPad,
}

/// `mask[i]` is true when token `i` is a training target (predicted from the
/// tokens before it). Position 0 is never a target.
pub fn target_mask(tokens: &[Token], policy: LossMasking) -> Vec<bool> {
    (0..tokens.len())
        .map(|i| {
            if i == 0 {
                return false;
            }
            let t = tokens[i];
            match policy {
                LossMasking::AllNonPad => t != PAD,
                LossMasking::ValuesAndFirstEos => is_value(t) || (t == EOS && tokens[i - 1] != EOS),
            }
        })
        .collect()
}
