//! `hgtree` command-line front end. Every subcommand writes a manifest
//! (argv, resolved config, seeds, artifact hashes) next to its outputs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use hgtree::bench::{bench_variant, BenchResult};
use hgtree::config::{DataKind, Profile, RunConfig};
use hgtree::generation::{
    complete, encode_point_cloud, sample_conditional, sample_growth, sample_unconditional, SamplerConfig,
};
use hgtree::io::{sha256_file, write_atomic};
use hgtree::mesh::export_mesh;
use hgtree::metrics::{default_connect_eps, evaluate, EvalSettings};
use hgtree::model::{HourglassModel, Variant};
use hgtree::tensor::Checkpoint;
use hgtree::tokenizer::{GrowthLayout, LossMasking, Quantizer, GROUP};
use hgtree::training::{
    load_checkpoint, normalize_corpus, normalize_growth, perplexity, train, Example, SequenceSpec, TrainOutput,
    CHECKPOINT_FILE, LOG_FILE,
};
use hgtree::tree::{
    generate_corpus, generate_procedural, read_growth_dataset, read_tree_dataset, write_growth_dataset,
    write_tree_dataset, GrowthSequence, Point3, ProceduralParams, TreeSkeleton,
};
use hgtree::{Error, Result};

#[derive(Parser)]
#[command(name = "hgtree", version, about = "Autoregressive tree-skeleton generation")]
struct Cli {
    /// TOML run configuration (sections: paths, data, model, train, sampler, eval).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config field, e.g. `--set train.epochs=10`. Repeatable;
    /// applied after the file and after HGTREE_SECTION__KEY variables.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a normalized procedural corpus.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_profile)]
        profile: Option<Profile>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        n_max: Option<usize>,
        /// Write ten-stage growth sequences instead of final trees.
        #[arg(long)]
        growth: bool,
    },
    /// Fit quantile bin edges to a tree corpus.
    FitQuantizer {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint.bin, train_log.csv and quantizer.txt.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        quantizer: Option<PathBuf>,
    },
    /// Unconditional samples.
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write one OBJ per tree into this directory.
        #[arg(long)]
        obj_dir: Option<PathBuf>,
    },
    /// Continue the first tree of a dataset file.
    Complete {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        prompt: PathBuf,
        /// Keep only this many leading branches of the prompt tree.
        #[arg(long)]
        keep: Option<usize>,
        /// Close the prompt with an EOS block (no continuation).
        #[arg(long)]
        close: bool,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trees conditioned on a point cloud (text file, one `x y z` per line).
    Pc2tree {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        points: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ten-stage growth sequences.
    Grow {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics of a generated set against reference and training sets.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        train: PathBuf,
        /// Source of the Connect tolerance; also enables held-out NLL.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        quantizer: Option<PathBuf>,
        /// CSV report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tube meshes (OBJ), one file per tree.
    ExportMesh {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 8)]
        sides: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Step time and peak memory per variant at a fixed context.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "pt,hg1,hg2")]
        variants: Vec<String>,
        #[arg(long, default_value_t = 1616)]
        context: usize,
        #[arg(long, default_value_t = 24)]
        layers: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        heads: usize,
        #[arg(long, default_value_t = 2)]
        steps: usize,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One variant in this process; used by `bench` for isolated memory.
    #[command(hide = true)]
    BenchOne {
        #[arg(long)]
        variant: String,
        #[arg(long)]
        context: usize,
        #[arg(long)]
        layers: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        heads: usize,
        #[arg(long)]
        steps: usize,
    },
}

fn parse_profile(s: &str) -> std::result::Result<Profile, String> {
    match s.to_ascii_lowercase().as_str() {
        "elm" => Ok(Profile::Elm),
        "pine" => Ok(Profile::Pine),
        "sapling" => Ok(Profile::Sapling),
        _ => Err(format!("unknown profile {s:?} (elm, pine, sapling)")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HGTREE_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

struct Manifest {
    command: &'static str,
    seeds: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    extra: serde_json::Value,
}

impl Manifest {
    fn new(command: &'static str) -> Self {
        Self { command, seeds: json!({}), inputs: vec![], outputs: vec![], extra: json!({}) }
    }

    /// Writes `<dir>/manifest.json` when `at` is a directory, else `<at>.manifest.json`.
    fn write(&self, cfg: &RunConfig, at: &Path) -> Result<()> {
        let hashes = |ps: &[PathBuf]| -> Result<serde_json::Map<String, serde_json::Value>> {
            ps.iter().map(|p| Ok((p.display().to_string(), json!(sha256_file(p)?)))).collect()
        };
        let body = json!({
            "tool": "hgtree",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "config": cfg,
            "seeds": self.seeds,
            "inputs": hashes(&self.inputs)?,
            "artifacts": hashes(&self.outputs)?,
            "extra": self.extra,
        });
        let path = if at.is_dir() {
            at.join("manifest.json")
        } else {
            let mut s = at.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        };
        let text = serde_json::to_string_pretty(&body).map_err(|e| Error::Format(e.to_string()))?;
        write_atomic(&path, text.as_bytes())
    }
}

fn need(p: Option<PathBuf>, field: &str) -> Result<PathBuf> {
    let p = p.ok_or_else(|| Error::Usage(format!("missing {field} (flag or config)")))?;
    if !p.exists() {
        return Err(Error::Usage(format!("{field}: {} does not exist", p.display())));
    }
    Ok(p)
}

fn load_model(path: &Path) -> Result<(HourglassModel<f32>, SequenceSpec)> {
    let (m, s, _) = load_checkpoint(Checkpoint::<f32>::load(path)?)?;
    Ok((m, s))
}

fn procedural(profile: Profile, seed: u64) -> ProceduralParams {
    match profile {
        Profile::Elm => ProceduralParams::elm(seed),
        Profile::Pine => ProceduralParams::pine(seed),
        Profile::Sapling => ProceduralParams::sapling(seed),
    }
}

fn n_max_of(cfg: &RunConfig) -> usize {
    if cfg.data.n_max > 0 {
        cfg.data.n_max
    } else {
        procedural(cfg.data.profile, 0).default_n_max()
    }
}

/// Seeds `seed, seed+1, ...` per sample; failures are counted, not fatal.
fn sample_many<F>(count: usize, seed: u64, mut f: F) -> (Vec<TreeSkeleton>, usize)
where
    F: FnMut(u64) -> Result<TreeSkeleton>,
{
    let mut out = Vec::with_capacity(count);
    let mut failed = 0;
    for i in 0..count as u64 {
        match f(seed.wrapping_add(i)) {
            Ok(t) if !t.is_empty() => out.push(t),
            Ok(_) => failed += 1,
            Err(e) => {
                log::warn!("sample {i}: {e}");
                failed += 1;
            }
        }
    }
    (out, failed)
}

fn write_meshes(trees: &[TreeSkeleton], sides: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(trees.len());
    let mut skipped = 0;
    for (i, t) in trees.iter().enumerate() {
        let m = export_mesh(t, sides)?;
        skipped += m.skipped;
        let p = dir.join(format!("tree_{i:05}.obj"));
        write_atomic(&p, m.to_obj().as_bytes())?;
        paths.push(p);
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} zero-length branches");
    }
    Ok(paths)
}

fn read_points(path: &Path) -> Result<Vec<Point3>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
            <[f64; 3]>::try_from(v)
                .map_err(|_| Error::Format(format!("{} line {}: expected 3 numbers", path.display(), i + 1)))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.sets)?;
    let sampler = cfg.sampler.clone();
    match cli.cmd {
        Cmd::GenData { out, profile, seed, count, n_max, growth } => {
            if let Some(p) = profile {
                cfg.data.profile = p;
            }
            cfg.data.seed = seed.unwrap_or(cfg.data.seed);
            cfg.data.count = count.unwrap_or(cfg.data.count);
            cfg.data.n_max = n_max.unwrap_or(cfg.data.n_max);
            if growth {
                cfg.data.kind = DataKind::Growth;
            }
            let params = procedural(cfg.data.profile, cfg.data.seed);
            let n_max = n_max_of(&cfg);
            if cfg.data.kind == DataKind::Growth {
                let seqs = (0..cfg.data.count as u64)
                    .map(|i| {
                        let p = params.clone().with_seed(cfg.data.seed.wrapping_add(i));
                        normalize_growth(&generate_procedural(&p, n_max)?)
                    })
                    .collect::<Result<Vec<GrowthSequence>>>()?;
                write_growth_dataset(&out, &seqs)?;
            } else {
                let raw = generate_corpus(&params, cfg.data.seed, cfg.data.count, n_max)?;
                write_tree_dataset(&out, &normalize_corpus(&raw)?)?;
            }
            let mut m = Manifest::new("gen-data");
            m.seeds = json!({ "data": cfg.data.seed });
            m.outputs.push(out.clone());
            m.write(&cfg, &out)
        }
        Cmd::FitQuantizer { corpus, out } => {
            let corpus = need(corpus.or(cfg.paths.corpus.clone()), "paths.corpus")?;
            let trees = load_corpus_trees(&corpus)?;
            Quantizer::fit(&trees)?.save(&out)?;
            let mut m = Manifest::new("fit-quantizer");
            m.inputs.push(corpus);
            m.outputs.push(out.clone());
            m.write(&cfg, &out)
        }
        Cmd::Train { corpus, out_dir, quantizer } => {
            let corpus = need(corpus.or(cfg.paths.corpus.clone()), "paths.corpus")?;
            let out_dir = out_dir
                .or(cfg.paths.out_dir.clone())
                .ok_or_else(|| Error::Usage("missing paths.out_dir (flag or config)".into()))?;
            let quantizer = quantizer.or(cfg.paths.quantizer.clone());
            cfg.paths = hgtree::config::Paths {
                corpus: Some(corpus.clone()),
                out_dir: Some(out_dir.clone()),
                quantizer: quantizer.clone(),
                checkpoint: None,
            };
            let (data, stage_trees, spec) = build_training_set(&cfg, &corpus, quantizer.as_deref())?;
            let mut model = HourglassModel::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
            log::info!(
                "{} examples ({} trees), {} parameters, variant {}",
                data.len(),
                stage_trees,
                model.num_params(),
                cfg.model.variant
            );
            std::fs::create_dir_all(&out_dir)?;
            let out = TrainOutput { dir: Some(out_dir.clone()), metadata: json!({ "corpus": corpus }) };
            let rep = train(&mut model, &data, &spec, &cfg.train, &out)?;
            if let Some(last) = rep.log.last() {
                log::info!("final loss {:.5} after {} steps", last.loss, rep.steps);
            }
            let mut m = Manifest::new("train");
            m.seeds = json!({ "train": cfg.train.seed });
            m.inputs.push(corpus);
            m.inputs.extend(quantizer);
            for f in [CHECKPOINT_FILE, LOG_FILE, "quantizer.txt"] {
                m.outputs.push(out_dir.join(f));
            }
            m.extra = json!({ "steps": rep.steps, "params": model.num_params() });
            m.write(&cfg, &out_dir)
        }
        Cmd::Sample { checkpoint, count, out, obj_dir } => {
            let ck = need(checkpoint.or(cfg.paths.checkpoint.clone()), "paths.checkpoint")?;
            let (model, spec) = load_model(&ck)?;
            let (trees, failed) = sample_many(count, sampler.seed, |seed| {
                sample_unconditional(&model, &SamplerConfig { seed, ..sampler.clone() })?.to_tree(&spec)
            });
            finish_samples("sample", &cfg, ck, trees, failed, &out, obj_dir.as_deref())
        }
        Cmd::Complete { checkpoint, prompt, keep, close, count, out } => {
            let ck = need(checkpoint.or(cfg.paths.checkpoint.clone()), "paths.checkpoint")?;
            let (model, spec) = load_model(&ck)?;
            let tree = load_corpus_trees(&need(Some(prompt.clone()), "--prompt")?)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::Usage("prompt file holds no tree".into()))?;
            let partial = match keep {
                Some(k) => ordered_prefix(&tree, &spec, k)?,
                None => tree,
            };
            let outs = complete(&model, &spec, &partial, close, count, &sampler)?;
            let mut failed = 0;
            let trees: Vec<TreeSkeleton> = outs
                .iter()
                .filter_map(|s| s.to_tree(&spec).map_err(|_| failed += 1).ok())
                .collect();
            finish_samples("complete", &cfg, ck, trees, failed, &out, None)
        }
        Cmd::Pc2tree { checkpoint, points, count, out } => {
            let ck = need(checkpoint.or(cfg.paths.checkpoint.clone()), "paths.checkpoint")?;
            let (model, spec) = load_model(&ck)?;
            let pts = read_points(&need(Some(points.clone()), "--points")?)?;
            let prefix = encode_point_cloud(&model, &pts)?;
            let (trees, failed) = sample_many(count, sampler.seed, |seed| {
                sample_conditional(&model, &prefix, &SamplerConfig { seed, ..sampler.clone() })?.to_tree(&spec)
            });
            finish_samples("pc2tree", &cfg, ck, trees, failed, &out, None)
        }
        Cmd::Grow { checkpoint, count, out } => {
            let ck = need(checkpoint.or(cfg.paths.checkpoint.clone()), "paths.checkpoint")?;
            let (model, spec) = load_model(&ck)?;
            if spec.growth.is_none() {
                return Err(Error::Usage("checkpoint was not trained on growth sequences".into()));
            }
            let mut seqs = Vec::new();
            let mut failed = 0;
            for i in 0..count as u64 {
                match sample_growth(&model, &spec, &SamplerConfig { seed: sampler.seed.wrapping_add(i), ..sampler.clone() }) {
                    Ok((gs, _)) => seqs.push(gs),
                    Err(e) => {
                        log::warn!("growth sample {i}: {e}");
                        failed += 1;
                    }
                }
            }
            let monotone = seqs.iter().filter(|g| g.is_monotone()).count();
            log::info!("{} of {} growth samples have non-decreasing stage sizes", monotone, seqs.len());
            write_growth_dataset(&out, &seqs)?;
            let mut m = Manifest::new("grow");
            m.seeds = json!({ "sampler": sampler.seed });
            m.inputs.push(ck);
            m.outputs.push(out.clone());
            m.extra = json!({ "written": seqs.len(), "failed": failed, "monotone": monotone });
            m.write(&cfg, &out)
        }
        Cmd::Eval { generated, reference, train: train_path, checkpoint, quantizer, out } => {
            let gen = read_tree_dataset(&need(Some(generated.clone()), "--generated")?)?;
            let reference_trees = read_tree_dataset(&need(Some(reference.clone()), "--reference")?)?;
            let train_trees = read_tree_dataset(&need(Some(train_path.clone()), "--train")?)?;
            let checkpoint = checkpoint.or(cfg.paths.checkpoint.clone());
            let model = checkpoint.as_deref().map(load_model).transpose()?;
            let q = match (&model, quantizer.or(cfg.paths.quantizer.clone())) {
                (Some((_, spec)), _) => Some(spec.quantizer.clone()),
                (None, Some(p)) => Some(Quantizer::load(&p)?),
                (None, None) => None,
            };
            let connect_eps = match (cfg.eval.connect_eps, &q) {
                (Some(e), _) => e,
                (None, Some(q)) => default_connect_eps(q),
                (None, None) => {
                    return Err(Error::Usage("eval needs eval.connect_eps, --quantizer or --checkpoint".into()))
                }
            };
            let settings = EvalSettings {
                points_per_tree: cfg.eval.points_per_tree,
                jsd_grid: cfg.eval.jsd_grid,
                connect_eps,
                delta: cfg.eval.delta,
                seed: cfg.eval.seed,
            };
            let mut report = evaluate(&gen, &reference_trees, &train_trees, &settings)?;
            if let Some((m, spec)) = &model {
                let data: Vec<Example> = reference_trees.iter().cloned().map(Example::Tree).collect();
                let (nll, ppl) = perplexity(m, &data, spec, LossMasking::default())?;
                report.mean_nll = Some(nll);
                report.exp_mean_nll = Some(ppl);
            }
            print!("{report}");
            let mut m = Manifest::new("eval");
            m.seeds = json!({ "eval": cfg.eval.seed });
            m.inputs.extend([generated, reference, train_path]);
            m.inputs.extend(checkpoint);
            if let Some(out) = &out {
                write_atomic(out, report.to_csv().as_bytes())?;
                m.outputs.push(out.clone());
                m.write(&cfg, out)?;
            }
            Ok(())
        }
        Cmd::ExportMesh { input, sides, out_dir } => {
            let input = need(Some(input), "--input")?;
            let trees = load_corpus_trees(&input)?;
            let paths = write_meshes(&trees, sides, &out_dir)?;
            let mut m = Manifest::new("export-mesh");
            m.inputs.push(input);
            m.outputs = paths;
            m.write(&cfg, &out_dir)
        }
        Cmd::Bench { variants, context, layers, dim, heads, steps, out } => {
            let exe = std::env::current_exe()?;
            let mut rows: Vec<BenchResult> = Vec::new();
            for v in &variants {
                let v: Variant = v.parse()?;
                let child = std::process::Command::new(&exe)
                    .args(["bench-one", "--variant", &v.to_string()])
                    .args(["--context", &context.to_string(), "--layers", &layers.to_string()])
                    .args(["--dim", &dim.to_string(), "--heads", &heads.to_string(), "--steps", &steps.to_string()])
                    .output()?;
                if !child.status.success() {
                    return Err(Error::InternalState(format!(
                        "bench of {v} failed: {}",
                        String::from_utf8_lossy(&child.stderr).trim()
                    )));
                }
                let row: BenchResult =
                    serde_json::from_slice(&child.stdout).map_err(|e| Error::Format(format!("bench output: {e}")))?;
                rows.push(row);
            }
            let base = rows.first().cloned();
            println!("{:<6} {:>10} {:>12} {:>10} {:>14} {:>10} {:>10}", "model", "params", "step_s", "rel_time", "peak_rss_MB", "rel_mem", "attn_rel");
            for r in &rows {
                let b = base.as_ref().expect("nonempty rows");
                let mem = r.peak_rss_bytes.map_or(f64::NAN, |m| m as f64 / 1e6);
                let bmem = b.peak_rss_bytes.map_or(f64::NAN, |m| m as f64 / 1e6);
                println!(
                    "{:<6} {:>10} {:>12.3} {:>10.3} {:>14.1} {:>10.3} {:>10.4}",
                    r.variant,
                    r.params,
                    r.step_seconds,
                    r.step_seconds / b.step_seconds,
                    mem,
                    mem / bmem,
                    r.attention_units / b.attention_units
                );
            }
            if let Some(out) = &out {
                let text = serde_json::to_string_pretty(&rows).map_err(|e| Error::Format(e.to_string()))?;
                write_atomic(out, text.as_bytes())?;
                let mut m = Manifest::new("bench");
                m.outputs.push(out.clone());
                m.write(&cfg, out)?;
            }
            Ok(())
        }
        Cmd::BenchOne { variant, context, layers, dim, heads, steps } => {
            let mc = hgtree::model::ModelConfig {
                variant: variant.parse()?,
                context,
                layers,
                dim,
                heads,
                mlp_ratio: 4,
                ..Default::default()
            };
            let r = bench_variant(&mc, steps, 0)?;
            println!("{}", serde_json::to_string(&r).map_err(|e| Error::Format(e.to_string()))?);
            Ok(())
        }
    }
}

/// Trees of a static dataset, or the final stages of a growth dataset.
fn load_corpus_trees(path: &Path) -> Result<Vec<TreeSkeleton>> {
    match read_tree_dataset(path) {
        Ok(t) => Ok(t),
        Err(_) => Ok(read_growth_dataset(path)?.into_iter().flat_map(|g| g.stages).collect()),
    }
}

/// The first `k` branches of `tree` in the spec's ordering.
fn ordered_prefix(tree: &TreeSkeleton, spec: &SequenceSpec, k: usize) -> Result<TreeSkeleton> {
    let seq = spec.tokenize_tree(tree)?;
    let k = k.clamp(1, tree.len());
    let groups = &seq.tokens[GROUP..GROUP * (k + 1)];
    let branches = groups.chunks(GROUP).map(|g| spec.quantizer.dequantize_group(g)).collect();
    Ok(TreeSkeleton::new(branches))
}

fn build_training_set(
    cfg: &RunConfig,
    corpus: &Path,
    quantizer: Option<&Path>,
) -> Result<(Vec<Example>, usize, SequenceSpec)> {
    let (data, all_trees, n_max, growth) = match cfg.data.kind {
        DataKind::Growth => {
            let seqs = read_growth_dataset(corpus)?;
            let per_stage: Vec<usize> = (0..hgtree::tree::GROWTH_STAGES)
                .map(|k| seqs.iter().map(|g| g.stages[k].len()).max().unwrap_or(1))
                .collect();
            let all: Vec<TreeSkeleton> = seqs.iter().flat_map(|g| g.stages.clone()).collect();
            let n_max = *per_stage.iter().max().unwrap_or(&1);
            (seqs.into_iter().map(Example::Growth).collect::<Vec<_>>(), all, n_max, Some(per_stage))
        }
        kind => {
            let trees = read_tree_dataset(corpus)?;
            let n_max = if cfg.data.n_max > 0 { cfg.data.n_max } else { trees.iter().map(|t| t.len()).max().unwrap_or(1) };
            let wrap = if kind == DataKind::Conditioned { Example::Conditioned } else { Example::Tree };
            (trees.iter().cloned().map(wrap).collect(), trees, n_max, None)
        }
    };
    if data.is_empty() {
        return Err(Error::Usage(format!("corpus {} is empty", corpus.display())));
    }
    let q = match quantizer {
        Some(p) => Quantizer::load(p)?,
        None => Quantizer::fit(&all_trees)?,
    };
    let mut spec = SequenceSpec::new(q, cfg.ordering, n_max);
    spec.eps_connect = cfg.data.eps_connect;
    spec.growth = growth.map(GrowthLayout::fitted);
    if cfg.data.kind == DataKind::Conditioned {
        if cfg.model.cond_queries == 0 {
            return Err(Error::Usage("data.kind = conditioned needs model.cond_queries > 0".into()));
        }
        spec.cond_points = cfg.model.cond_points;
    }
    let need_len = cfg.model.prefix_len()
        + spec.growth.as_ref().map_or(GROUP * (n_max + 2), GrowthLayout::total_len);
    if need_len > cfg.model.context {
        return Err(Error::Usage(format!(
            "model.context = {} is too short for sequences of {need_len} tokens",
            cfg.model.context
        )));
    }
    Ok((data, all_trees.len(), spec))
}

fn finish_samples(
    command: &'static str,
    cfg: &RunConfig,
    ck: PathBuf,
    trees: Vec<TreeSkeleton>,
    failed: usize,
    out: &Path,
    obj_dir: Option<&Path>,
) -> Result<()> {
    if failed > 0 {
        log::warn!("{failed} samples did not decode to a tree");
    }
    write_tree_dataset(out, &trees)?;
    let mut m = Manifest::new(command);
    m.seeds = json!({ "sampler": cfg.sampler.seed });
    m.inputs.push(ck);
    m.outputs.push(out.to_path_buf());
    if let Some(dir) = obj_dir {
        m.outputs.extend(write_meshes(&trees, 8, dir)?);
    }
    m.extra = json!({ "written": trees.len(), "failed": failed });
    m.write(cfg, out)
}
