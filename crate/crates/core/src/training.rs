//! Sequence assembly, augmentation, loss and the training loop.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HourglassModel;
use crate::ordering::{order_tree, OrderStrategy};
use crate::tensor::{lr_schedule, AdamW, AdamWConfig, Checkpoint, Graph, Grads, Scalar};
use crate::tokenizer::{
    target_mask, tokenize, tokenize_growth, GrowthLayout, LossMasking, Quantizer, Token, TokenSequence,
};
use crate::tree::{
    augment, augment_isometry, normalize, sample_point_cloud, GrowthSequence, NormalizationTransform, Point3,
    TreeSkeleton, DEFAULT_EPS_CONNECT,
};

/// One training item.
#[derive(Debug, Clone, PartialEq)]
pub enum Example {
    Tree(TreeSkeleton),
    Growth(GrowthSequence),
    /// A tree paired with a point cloud sampled from (the augmented copy of) itself.
    Conditioned(TreeSkeleton),
}

/// How examples become token sequences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceSpec {
    #[serde(with = "quantizer_text")]
    pub quantizer: Quantizer,
    pub ordering: OrderStrategy,
    pub eps_connect: f64,
    pub n_max: usize,
    pub growth: Option<GrowthLayout>,
    pub cond_points: usize,
}

mod quantizer_text {
    use super::Quantizer;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(q: &Quantizer, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&q.to_text())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Quantizer, D::Error> {
        let text = String::deserialize(d)?;
        Quantizer::from_text(&text).map_err(serde::de::Error::custom)
    }
}

impl SequenceSpec {
    pub fn new(quantizer: Quantizer, ordering: OrderStrategy, n_max: usize) -> Self {
        Self {
            quantizer,
            ordering,
            eps_connect: DEFAULT_EPS_CONNECT,
            n_max,
            growth: None,
            cond_points: 200,
        }
    }

    /// Padded token sequence of `tree`.
    pub fn tokenize_tree(&self, tree: &TreeSkeleton) -> Result<TokenSequence> {
        let perm = order_tree(tree, self.ordering, self.eps_connect)?;
        tokenize(tree, &perm, &self.quantizer, self.n_max)
    }

    pub fn tokenize_growth(&self, gs: &GrowthSequence) -> Result<TokenSequence> {
        let layout = self
            .growth
            .as_ref()
            .ok_or_else(|| Error::InvalidParams("no growth layout configured".into()))?;
        tokenize_growth(gs, self.ordering, self.eps_connect, &self.quantizer, layout)
    }

    /// Tokens (trailing PAD trimmed to a multiple of 8) and, for conditioned
    /// examples, the conditioning cloud.
    pub fn encode(&self, ex: &Example, aug: Option<Augmentation>, cloud_seed: u64) -> Result<Encoded> {
        let (seq, points) = match ex {
            Example::Tree(t) => (self.tokenize_tree(&apply_tree(t, aug))?, None),
            Example::Conditioned(t) => {
                let t = apply_tree(t, aug);
                let pts = sample_point_cloud(&t, self.cond_points, cloud_seed);
                (self.tokenize_tree(&t)?, Some(pts))
            }
            Example::Growth(gs) => (self.tokenize_growth(&apply_growth(gs, aug)?)?, None),
        };
        let n = seq.trimmed_len();
        let mut tokens = seq.tokens;
        tokens.truncate(n);
        Ok(Encoded { tokens, points })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub tokens: Vec<Token>,
    pub points: Option<Vec<Point3>>,
}

/// Rotation about z plus optional mirroring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub theta_z: f64,
    pub mirror: bool,
}

impl Augmentation {
    pub fn sample(rng: &mut impl Rng, rotate: bool, mirror: bool) -> Self {
        Self {
            theta_z: if rotate { rng.random_range(0.0..TAU) } else { 0.0 },
            mirror: mirror && rng.random_bool(0.5),
        }
    }
}

fn apply_tree(t: &TreeSkeleton, aug: Option<Augmentation>) -> TreeSkeleton {
    match aug {
        Some(a) => augment(t, a.theta_z, a.mirror),
        None => t.clone(),
    }
}

/// Same isometry on every stage; re-normalized with the final stage's box so
/// the stages stay nested.
fn apply_growth(gs: &GrowthSequence, aug: Option<Augmentation>) -> Result<GrowthSequence> {
    let Some(a) = aug else { return Ok(gs.clone()) };
    let stages: Vec<TreeSkeleton> = gs.stages.iter().map(|s| augment_isometry(s, a.theta_z, a.mirror)).collect();
    let last = stages.last().expect("growth sequences have stages");
    let outside = last.endpoints().any(|p| p.pos().iter().any(|v| v.abs() > 1.0 + 1e-12));
    let stages = if outside {
        let tf = NormalizationTransform::fit(last)?;
        stages.iter().map(|s| tf.apply(s)).collect()
    } else {
        stages
    };
    GrowthSequence::new(stages)
}

/// Normalizes every tree of a raw corpus into [-1, 1]^3.
pub fn normalize_corpus(trees: &[TreeSkeleton]) -> Result<Vec<TreeSkeleton>> {
    trees.iter().map(|t| normalize(t).map(|(t, _)| t)).collect()
}

/// Normalizes all stages of a growth sequence with its final stage's box.
pub fn normalize_growth(gs: &GrowthSequence) -> Result<GrowthSequence> {
    let tf = NormalizationTransform::fit(gs.final_stage())?;
    GrowthSequence::new(gs.stages.iter().map(|s| tf.apply(s)).collect())
}

/// Per-row targets and weights for logits over `prefix + tokens` rows: row
/// `r` predicts combined position `r + 1`.
pub fn row_targets(tokens: &[Token], prefix: usize, masking: LossMasking) -> (Vec<usize>, Vec<bool>) {
    let mask = target_mask(tokens, masking);
    let n = prefix + tokens.len();
    (0..n)
        .map(|r| match (r + 1).checked_sub(prefix) {
            Some(i) if i < tokens.len() => (tokens[i] as usize, mask[i]),
            _ => (0, false),
        })
        .unzip()
}

/// Mean negative log-likelihood of `targets[i]` under row `i` of `logits`
/// over rows where `mask[i]` holds.
pub fn nll_loss<T: Scalar>(logits: &[T], vocab: usize, targets: &[usize], mask: &[bool]) -> Result<f64> {
    let rows = logits.len() / vocab.max(1);
    if logits.len() != rows * vocab || targets.len() != rows || mask.len() != rows {
        return Err(Error::shape("nll_loss", &[rows, vocab], &[targets.len(), mask.len()]));
    }
    let (sum, count) = nll_sum(logits, vocab, targets, mask)?;
    if count == 0 {
        return Err(Error::EmptyLoss);
    }
    Ok(sum / count as f64)
}

fn nll_sum<T: Scalar>(logits: &[T], vocab: usize, targets: &[usize], mask: &[bool]) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut count = 0;
    for ((row, &t), &m) in logits.chunks(vocab).zip(targets).zip(mask) {
        if !m {
            continue;
        }
        if t >= vocab {
            return Err(Error::shape("nll_loss target", &[t], &[vocab]));
        }
        let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln();
        sum += lse - row[t].f64();
        count += 1;
    }
    Ok((sum, count))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub augment_rotate: bool,
    pub augment_mirror: bool,
    pub seed: u64,
    pub masking: LossMasking,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    /// Keep a numbered checkpoint every this many epochs (0: latest only).
    pub keep_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 50,
            peak_lr: 5e-3,
            warmup_epochs: 5,
            weight_decay: 0.01,
            augment_rotate: true,
            augment_mirror: true,
            seed: 0,
            masking: LossMasking::default(),
            clip_norm: 1.0,
            keep_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParams("batch_size must be at least 1".into()));
        }
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return Err(Error::InvalidSchedule(format!(
                "warmup_epochs {} must be below epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.peak_lr >= 0.0 && self.weight_decay >= 0.0 && self.clip_norm >= 0.0) {
            return Err(Error::InvalidParams("learning rate, weight decay and clip norm must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub tokens_per_sec: f64,
}

pub const LOG_HEADER: &str = "step,epoch,lr,loss,tokens_per_sec";

impl LogRow {
    pub fn csv(&self) -> String {
        format!("{},{},{:.6e},{:.6},{:.1}", self.step, self.epoch, self.lr, self.loss, self.tokens_per_sec)
    }
}

/// Where checkpoints and the CSV log go; nothing is written when `dir` is None.
#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
    /// Extra metadata stored in each checkpoint.
    pub metadata: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct TrainReport<T> {
    pub log: Vec<LogRow>,
    pub optimizer: AdamW<T>,
    pub steps: u64,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.csv";

fn checkpoint_of<T: Scalar>(
    model: &HourglassModel<T>,
    opt: &AdamW<T>,
    spec: &SequenceSpec,
    cfg: &TrainConfig,
    epoch: usize,
    extra: &serde_json::Value,
) -> Checkpoint<T> {
    Checkpoint {
        metadata: serde_json::json!({
            "model": model.config,
            "sequence": spec,
            "train": cfg,
            "epoch": epoch,
            "extra": extra,
        }),
        params: model.params.clone(),
        optimizer: Some(opt.clone()),
    }
}

/// Restores model, sequence spec and (if present) optimizer from a
/// checkpoint written by [`train`].
pub fn load_checkpoint<T: Scalar>(ck: Checkpoint<T>) -> Result<(HourglassModel<T>, SequenceSpec, Option<AdamW<T>>)> {
    let fmt = |m: &str| Error::Format(format!("checkpoint metadata: {m}"));
    let config = serde_json::from_value(ck.metadata.get("model").cloned().ok_or_else(|| fmt("no model"))?)
        .map_err(|e| fmt(&e.to_string()))?;
    let spec = serde_json::from_value(ck.metadata.get("sequence").cloned().ok_or_else(|| fmt("no sequence spec"))?)
        .map_err(|e| fmt(&e.to_string()))?;
    let model = HourglassModel::from_params(config, ck.params)?;
    Ok((model, spec, ck.optimizer))
}

/// Trains `model` in place. Per epoch: shuffled batches, fresh augmentation
/// per sample, AdamW with warmup + cosine learning rate. Deterministic for a
/// fixed seed.
pub fn train<T: Scalar>(
    model: &mut HourglassModel<T>,
    data: &[Example],
    spec: &SequenceSpec,
    cfg: &TrainConfig,
    out: &TrainOutput,
) -> Result<TrainReport<T>> {
    cfg.validate()?;
    let adam = AdamWConfig { weight_decay: cfg.weight_decay, ..AdamWConfig::default() };
    let mut opt = AdamW::new(&model.params, adam);
    let mut log = Vec::new();
    if let Some(dir) = &out.dir {
        std::fs::create_dir_all(dir)?;
        crate::io::write_atomic(&dir.join("quantizer.txt"), spec.quantizer.to_text().as_bytes())?;
        checkpoint_of(model, &opt, spec, cfg, 0, &out.metadata).save(&dir.join(CHECKPOINT_FILE))?;
    }
    if cfg.epochs == 0 || data.is_empty() {
        return Ok(TrainReport { log, optimizer: opt, steps: 0 });
    }
    let batches_per_epoch = data.len().div_ceil(cfg.batch_size) as u64;
    let total = cfg.epochs as u64 * batches_per_epoch;
    let warmup = cfg.warmup_epochs as u64 * batches_per_epoch;
    let prefix_len = model.config.prefix_len();
    let mut grads = Grads::zeros_like(&model.params);
    let mut step = 0u64;
    let mut csv = String::new();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let started = Instant::now();
            step += 1;
            let lr = lr_schedule(step, warmup, total, cfg.peak_lr)?;
            let encoded = batch
                .iter()
                .map(|&i| {
                    let aug = Augmentation::sample(&mut rng, cfg.augment_rotate, cfg.augment_mirror);
                    let any_aug = cfg.augment_rotate || cfg.augment_mirror;
                    spec.encode(&data[i], any_aug.then_some(aug), rng.random())
                })
                .collect::<Result<Vec<_>>>()?;
            let rows: Vec<(Vec<usize>, Vec<bool>)> =
                encoded.iter().map(|e| row_targets(&e.tokens, prefix_len, cfg.masking)).collect();
            let n_targets: usize = rows.iter().map(|(_, m)| m.iter().filter(|&&b| b).count()).sum();
            if n_targets == 0 {
                return Err(Error::EmptyLoss);
            }
            grads.zero();
            let mut loss_value = 0.0;
            let mut tokens_seen = 0;
            for (enc, (targets, mask)) in encoded.iter().zip(&rows) {
                let count = mask.iter().filter(|&&b| b).count();
                if count == 0 {
                    continue;
                }
                tokens_seen += enc.tokens.len();
                let mut g = Graph::new(&model.params);
                let prefix = enc.points.as_ref().map(|p| model.encode_points(&mut g, p)).transpose()?;
                let logits = model.forward(&mut g, &enc.tokens, prefix)?;
                let weights: Vec<T> = mask.iter().map(|&m| if m { T::one() } else { T::zero() }).collect();
                let ce = g.cross_entropy(logits, targets, &weights)?;
                let loss = g.scale(ce, T::c(count as f64 / n_targets as f64));
                let v = g.scalar(loss).f64();
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss at step {step} (epoch {epoch}, batch {bi}, lr {lr:.3e})"
                    )));
                }
                loss_value += v;
                g.backward(loss, &mut grads)?;
            }
            if cfg.clip_norm > 0.0 {
                grads.clip_global_norm(cfg.clip_norm);
            }
            opt.step(&mut model.params, &grads, lr).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} (batch {bi}, lr {lr:.3e})")),
                e => e,
            })?;
            let row = LogRow {
                step,
                epoch,
                lr,
                loss: loss_value,
                tokens_per_sec: tokens_seen as f64 / started.elapsed().as_secs_f64().max(1e-9),
            };
            log::debug!("{}", row.csv());
            writeln!(csv, "{}", row.csv()).expect("string write");
            log.push(row);
        }
        if let Some(dir) = &out.dir {
            let ck = checkpoint_of(model, &opt, spec, cfg, epoch, &out.metadata);
            ck.save(&dir.join(CHECKPOINT_FILE))?;
            if cfg.keep_every > 0 && epoch % cfg.keep_every == 0 {
                ck.save(&dir.join(format!("checkpoint_epoch{epoch:05}.bin")))?;
            }
            crate::io::write_atomic(&dir.join(LOG_FILE), format!("{LOG_HEADER}\n{csv}").as_bytes())?;
        }
    }
    Ok(TrainReport { log, optimizer: opt, steps: step })
}

/// Token-weighted mean NLL over `data` (no augmentation) and its exponential.
pub fn perplexity<T: Scalar>(
    model: &HourglassModel<T>,
    data: &[Example],
    spec: &SequenceSpec,
    masking: LossMasking,
) -> Result<(f64, f64)> {
    let mut sum = 0.0;
    let mut count = 0;
    for (i, ex) in data.iter().enumerate() {
        let enc = spec.encode(ex, None, i as u64)?;
        let logits = model.logits(&enc.tokens, enc.points.as_deref())?;
        let (targets, mask) = row_targets(&enc.tokens, model.config.prefix_len(), masking);
        let (s, c) = nll_sum(&logits, model.config.vocab, &targets, &mask)?;
        sum += s;
        count += c;
    }
    if count == 0 {
        return Err(Error::EmptyLoss);
    }
    let mean = sum / count as f64;
    Ok((mean, mean.exp()))
}
