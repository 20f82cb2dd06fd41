//! Unconditional, completion, point-cloud-conditioned and growth sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HourglassModel, IncrementalDecoder};
use crate::tensor::{Graph, Scalar};
use crate::tokenizer::{detokenize, is_value, split_stage_frames, Token, EOS, GROUP, SOS, VALUE_BINS, PAD};
use crate::training::SequenceSpec;
use crate::tree::{GrowthSequence, Point3, TreeSkeleton, GROWTH_STAGES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Softmax temperature; 0 selects the arg-max token.
    pub temperature: f64,
    /// Keep only the `top_k` most likely tokens; 0 disables the cutoff.
    pub top_k: usize,
    /// Cap on sampled tokens; 0 means "until the context is full".
    pub max_new_tokens: usize,
    pub seed: u64,
    /// Mask tokens that cannot occur at the current position (special tokens
    /// inside a branch group, SOS/PAD after the opening block).
    pub constrain: bool,
    /// Decode with key/value caches; otherwise re-run the full forward pass
    /// on the PAD-padded buffer each step.
    pub use_cache: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: 50,
            max_new_tokens: 0,
            seed: 0,
            constrain: true,
            use_cache: true,
        }
    }
}

impl SamplerConfig {
    pub fn greedy() -> Self {
        Self { temperature: 0.0, top_k: 0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidParams(format!("temperature {} must be >= 0", self.temperature)));
        }
        Ok(())
    }
}

/// A sampled token stream (opening SOS block included, no conditioning
/// prefix).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sampled {
    pub tokens: Vec<Token>,
    pub prompt_len: usize,
    /// The budget or context ran out before the stop rule fired.
    pub truncated: bool,
}

impl Sampled {
    pub fn to_tree(&self, spec: &SequenceSpec) -> Result<TreeSkeleton> {
        Ok(detokenize(&self.tokens, &spec.quantizer)?.tree)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Sos(usize),
    Body,
    Eos(usize),
    Done,
}

/// Frame grammar: `8 SOS, groups of 8 values, 8 EOS`, repeated `frames` times.
#[derive(Debug, Clone)]
struct Grammar {
    frames: usize,
    done_frames: usize,
    phase: Phase,
    body_len: usize,
}

impl Grammar {
    fn new(frames: usize) -> Self {
        Self { frames, done_frames: 0, phase: Phase::Sos(GROUP), body_len: 0 }
    }

    /// Token forced at this point, if any.
    fn forced(&self) -> Option<Token> {
        match self.phase {
            Phase::Sos(_) => Some(SOS),
            Phase::Eos(_) => Some(EOS),
            _ => None,
        }
    }

    fn allowed(&self, t: Token) -> bool {
        match self.phase {
            Phase::Body if self.body_len.is_multiple_of(GROUP) => is_value(t) || t == EOS,
            Phase::Body => is_value(t),
            Phase::Sos(_) => t == SOS,
            Phase::Eos(_) => t == EOS,
            Phase::Done => false,
        }
    }

    fn push(&mut self, t: Token) {
        self.phase = match self.phase {
            Phase::Sos(n) if t == SOS => {
                if n > 1 {
                    Phase::Sos(n - 1)
                } else {
                    self.body_len = 0;
                    Phase::Body
                }
            }
            Phase::Sos(_) => {
                self.body_len = 1;
                Phase::Body
            }
            Phase::Body if t == EOS && self.body_len.is_multiple_of(GROUP) => Phase::Eos(GROUP - 1),
            Phase::Body => {
                self.body_len += 1;
                Phase::Body
            }
            Phase::Eos(n) if n > 1 => Phase::Eos(n - 1),
            Phase::Eos(_) => {
                self.done_frames += 1;
                if self.done_frames == self.frames {
                    Phase::Done
                } else {
                    Phase::Sos(GROUP)
                }
            }
            Phase::Done => Phase::Done,
        };
    }
}

fn pick(logits: &[f64], grammar: &Grammar, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Token {
    let mut scored: Vec<(usize, f64)> = logits
        .iter()
        .enumerate()
        .filter(|&(t, _)| !cfg.constrain || grammar.allowed(t as Token))
        .map(|(t, &l)| (t, l))
        .collect();
    if scored.is_empty() {
        return EOS;
    }
    if cfg.temperature == 0.0 {
        let best = scored.iter().fold(scored[0], |b, &c| if c.1 > b.1 { c } else { b });
        return best.0 as Token;
    }
    if cfg.top_k > 0 && cfg.top_k < scored.len() {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(cfg.top_k);
    }
    let max = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scored.iter().map(|s| ((s.1 - max) / cfg.temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (s, w) in scored.iter().zip(&weights) {
        if u < *w {
            return s.0 as Token;
        }
        u -= w;
    }
    scored.last().expect("nonempty").0 as Token
}

/// Source of next-token logits: cached incremental decoding or full
/// re-forward on a padded buffer.
enum Stepper<'m, T: Scalar> {
    Cached(IncrementalDecoder<'m, T>),
    Full { model: &'m HourglassModel<T>, prefix: Option<Vec<T>>, tokens: Vec<Token> },
}

impl<T: Scalar> Stepper<'_, T> {
    /// Consumes a token whose successor logits are not needed.
    fn skip(&mut self, t: Token) -> Result<()> {
        match self {
            Stepper::Cached(dec) => dec.step_token(t).map(drop),
            Stepper::Full { tokens, .. } => {
                tokens.push(t);
                Ok(())
            }
        }
    }

    fn feed(&mut self, t: Token) -> Result<Vec<f64>> {
        match self {
            Stepper::Cached(dec) => Ok(dec.step_token(t)?.iter().map(|v| v.f64()).collect()),
            Stepper::Full { model, prefix, tokens } => {
                tokens.push(t);
                let n = tokens.len();
                let mut buf = tokens.clone();
                buf.resize(n.div_ceil(GROUP) * GROUP, PAD);
                let mut g = Graph::new(&model.params);
                let p = match prefix {
                    Some(rows) => Some(g.input(rows.clone(), model.config.prefix_len(), model.config.dim)?),
                    None => None,
                };
                let logits = model.forward(&mut g, &buf, p)?;
                let v = model.config.vocab;
                let row = model.config.prefix_len() + n - 1;
                Ok(g.value(logits)[row * v..(row + 1) * v].iter().map(|x| x.f64()).collect())
            }
        }
    }
}

fn new_stepper<'m, T: Scalar>(
    model: &'m HourglassModel<T>,
    prefix: Option<&[T]>,
    use_cache: bool,
) -> Result<Stepper<'m, T>> {
    let want = model.config.prefix_len() * model.config.dim;
    let got = prefix.map_or(0, <[T]>::len);
    if got != want {
        return Err(Error::shape("conditioning prefix", &[got], &[want]));
    }
    if !use_cache {
        return Ok(Stepper::Full { model, prefix: prefix.map(<[T]>::to_vec), tokens: Vec::new() });
    }
    let mut dec = IncrementalDecoder::new(model);
    if let Some(rows) = prefix {
        for r in rows.chunks(model.config.dim) {
            dec.step_embedding(r.to_vec())?;
        }
    }
    Ok(Stepper::Cached(dec))
}

/// Core loop: consumes `prompt` (must start with the SOS block), then
/// samples until `frames` frames are closed, the budget is spent or the
/// context is full.
pub fn sample_frames<T: Scalar>(
    model: &HourglassModel<T>,
    prefix: Option<&[T]>,
    prompt: &[Token],
    frames: usize,
    cfg: &SamplerConfig,
) -> Result<Sampled> {
    cfg.validate()?;
    if prompt.first() != Some(&SOS) {
        return Err(Error::InvalidParams("prompt must begin with the SOS block".into()));
    }
    let room = model.config.context - model.config.prefix_len();
    if prompt.len() > room {
        return Err(Error::Capacity(format!("prompt of {} tokens exceeds the {room}-token context", prompt.len())));
    }
    let mut stepper = new_stepper(model, prefix, cfg.use_cache)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grammar = Grammar::new(frames);
    let mut tokens = Vec::with_capacity(room);
    let mut logits = Vec::new();
    for (i, &t) in prompt.iter().enumerate() {
        grammar.push(t);
        tokens.push(t);
        if i + 1 == prompt.len() {
            logits = stepper.feed(t)?;
        } else {
            stepper.skip(t)?;
        }
    }
    let budget = if cfg.max_new_tokens == 0 { room } else { (prompt.len() + cfg.max_new_tokens).min(room) };
    let mut truncated = false;
    while grammar.phase != Phase::Done {
        if tokens.len() >= budget {
            truncated = true;
            break;
        }
        let t = grammar.forced().unwrap_or_else(|| pick(&logits, &grammar, cfg, &mut rng));
        grammar.push(t);
        tokens.push(t);
        if grammar.phase != Phase::Done && tokens.len() < budget {
            logits = stepper.feed(t)?;
        }
    }
    Ok(Sampled { tokens, prompt_len: prompt.len(), truncated })
}

/// Free-running sample from the opening SOS block.
pub fn sample_unconditional<T: Scalar>(model: &HourglassModel<T>, cfg: &SamplerConfig) -> Result<Sampled> {
    sample_frames(model, None, &[SOS; GROUP], 1, cfg)
}

/// Prompt tokens for a partial tree: SOS block plus its branch groups in the
/// spec's ordering, optionally closed by the EOS block.
pub fn completion_prompt(spec: &SequenceSpec, partial: &TreeSkeleton, close: bool) -> Result<Vec<Token>> {
    let seq = spec.tokenize_tree(partial)?;
    let mut prompt = seq.tokens[..GROUP * (1 + partial.len())].to_vec();
    if close {
        prompt.extend([EOS; GROUP]);
    }
    Ok(prompt)
}

/// `count` continuations of `partial`, sample `i` seeded with `cfg.seed + i`.
/// Every returned stream starts with the prompt tokens verbatim.
pub fn complete<T: Scalar>(
    model: &HourglassModel<T>,
    spec: &SequenceSpec,
    partial: &TreeSkeleton,
    close: bool,
    count: usize,
    cfg: &SamplerConfig,
) -> Result<Vec<Sampled>> {
    let prompt = completion_prompt(spec, partial, close)?;
    (0..count)
        .map(|i| {
            let c = SamplerConfig { seed: cfg.seed.wrapping_add(i as u64), ..cfg.clone() };
            sample_frames(model, None, &prompt, 1, &c)
        })
        .collect()
}

/// Conditioning prefix rows `[prefix_len * dim]` for a point cloud.
pub fn encode_point_cloud<T: Scalar>(model: &HourglassModel<T>, points: &[Point3]) -> Result<Vec<T>> {
    if points.is_empty() {
        return Err(Error::InvalidParams("point cloud is empty".into()));
    }
    let mut g = Graph::new(&model.params);
    let p = model.encode_points(&mut g, points)?;
    Ok(g.value(p).to_vec())
}

pub fn sample_conditional<T: Scalar>(model: &HourglassModel<T>, prefix: &[T], cfg: &SamplerConfig) -> Result<Sampled> {
    sample_frames(model, Some(prefix), &[SOS; GROUP], 1, cfg)
}

/// Samples a ten-stage growth stream and splits it into stages.
pub fn sample_growth<T: Scalar>(
    model: &HourglassModel<T>,
    spec: &SequenceSpec,
    cfg: &SamplerConfig,
) -> Result<(GrowthSequence, Sampled)> {
    let s = sample_frames(model, None, &[SOS; GROUP], GROWTH_STAGES, cfg)?;
    let gs = growth_from_tokens(&s.tokens, spec)?;
    Ok((gs, s))
}

/// Splits and decodes stage frames; fewer than ten decodable frames is an error.
pub fn growth_from_tokens(tokens: &[Token], spec: &SequenceSpec) -> Result<GrowthSequence> {
    let frames = split_stage_frames(tokens);
    let stages: Vec<TreeSkeleton> = frames
        .iter()
        .map_while(|f| detokenize(f, &spec.quantizer).ok().map(|d| d.tree))
        .collect();
    if stages.len() < GROWTH_STAGES {
        return Err(Error::MalformedGrowth { recovered: stages.len() });
    }
    GrowthSequence::new(stages.into_iter().take(GROWTH_STAGES).collect())
}

/// Fraction of positions where two token streams agree, over the longer length.
pub fn token_agreement(a: &[Token], b: &[Token]) -> f64 {
    let n = a.len().max(b.len());
    if n == 0 {
        return 1.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n as f64
}

/// Number of value tokens in a stream.
pub fn value_count(tokens: &[Token]) -> usize {
    tokens.iter().filter(|&&t| (t as usize) < VALUE_BINS).count()
}
