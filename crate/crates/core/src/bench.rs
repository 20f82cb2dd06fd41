//! One training step (forward, loss, backward) timed at a fixed context,
//! used to compare variants. Peak resident memory is read from procfs.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{HourglassModel, ModelConfig};
use crate::tensor::{Graph, Grads};
use crate::tokenizer::{Token, VALUE_BINS, SOS, GROUP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub variant: String,
    pub context: usize,
    pub layers: usize,
    pub dim: usize,
    pub params: usize,
    pub steps: usize,
    /// Mean wall-clock seconds per step.
    pub step_seconds: f64,
    /// Largest live tape allocation during a step.
    pub tape_peak_bytes: usize,
    /// Process high-water mark, when procfs is available.
    pub peak_rss_bytes: Option<u64>,
    /// Attention score count relative to one full-length layer.
    pub attention_units: f64,
}

/// `VmHWM` of the current process in bytes.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Runs `steps` forward+backward passes over one random full-context
/// sequence in f32 and reports the mean step time.
pub fn bench_variant(config: &ModelConfig, steps: usize, seed: u64) -> Result<BenchResult> {
    let model = HourglassModel::<f32>::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.context - config.prefix_len();
    let mut tokens: Vec<Token> = (0..n).map(|_| rng.random_range(0..VALUE_BINS as Token)).collect();
    tokens[..GROUP].fill(SOS);
    let targets: Vec<usize> = tokens[1..].iter().map(|&t| t as usize).chain([0]).collect();
    let mut weights = vec![1.0f32; n];
    weights[n - 1] = 0.0;
    let mut grads = Grads::zeros_like(&model.params);
    let mut tape_peak = 0;
    let start = Instant::now();
    for _ in 0..steps.max(1) {
        grads.zero();
        let mut g = Graph::new(&model.params);
        let logits = model.forward(&mut g, &tokens, None)?;
        let loss = g.cross_entropy(logits, &targets, &weights)?;
        g.backward(loss, &mut grads)?;
        tape_peak = tape_peak.max(g.peak_bytes());
    }
    let step_seconds = start.elapsed().as_secs_f64() / steps.max(1) as f64;
    Ok(BenchResult {
        variant: config.variant.to_string(),
        context: config.context,
        layers: config.layers,
        dim: config.dim,
        params: model.num_params(),
        steps: steps.max(1),
        step_seconds,
        tape_peak_bytes: tape_peak,
        peak_rss_bytes: peak_rss_bytes(),
        attention_units: config.attention_cost_units(),
    })
}
