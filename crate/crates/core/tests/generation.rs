use hgtree::generation::*;
use hgtree::model::{HourglassModel, ModelConfig, Variant};
use hgtree::ordering::OrderStrategy;
use hgtree::tokenizer::{detokenize, tokenize_growth, GrowthLayout, Quantizer, split_stage_frames, EOS, GROUP, PAD, SOS};
use hgtree::training::{normalize_corpus, normalize_growth, SequenceSpec};
use hgtree::tree::*;
use hgtree::Error;

fn trees() -> Vec<TreeSkeleton> {
    normalize_corpus(&generate_corpus(&ProceduralParams::sapling(0), 0, 6, 30).unwrap()).unwrap()
}

fn model(variant: Variant) -> HourglassModel<f64> {
    let cfg = ModelConfig { variant, dim: 16, heads: 2, layers: 5, mlp_ratio: 2, context: 256, ..ModelConfig::desk() };
    HourglassModel::new(cfg, 11).unwrap()
}

fn well_formed(tokens: &[u16]) {
    assert_eq!(tokens.len() % GROUP, 0);
    assert!(tokens[..GROUP].iter().all(|&t| t == SOS));
    for g in tokens[GROUP..].chunks(GROUP) {
        let eos = g.iter().filter(|&&t| t == EOS).count();
        assert!(eos == 0 || eos == GROUP, "mixed group {g:?}");
        assert!(!g.contains(&PAD) && !g.contains(&SOS));
    }
}

#[test]
fn same_seed_same_sample() {
    let m = model(Variant::Hg2Rl);
    let cfg = SamplerConfig { seed: 4, ..Default::default() };
    let a = sample_unconditional(&m, &cfg).unwrap();
    assert_eq!(a, sample_unconditional(&m, &cfg).unwrap());
    let b = sample_unconditional(&m, &SamplerConfig { seed: 5, ..cfg }).unwrap();
    assert_ne!(a.tokens, b.tokens);
}

#[test]
fn cached_and_full_forward_samplers_agree() {
    for v in [Variant::Pt, Variant::Hg1, Variant::Hg2Rl] {
        let m = model(v);
        let cfg = SamplerConfig { seed: 9, max_new_tokens: 96, ..Default::default() };
        let a = sample_unconditional(&m, &cfg).unwrap();
        let b = sample_unconditional(&m, &SamplerConfig { use_cache: false, ..cfg }).unwrap();
        assert_eq!(a, b, "{v:?}");
    }
}

#[test]
fn constrained_samples_are_well_formed() {
    let m = model(Variant::Hg2);
    for seed in 0..6 {
        let s = sample_unconditional(&m, &SamplerConfig { seed, temperature: 1.5, top_k: 0, ..Default::default() }).unwrap();
        well_formed(&s.tokens);
        if !s.truncated {
            assert!(s.tokens.ends_with(&[EOS; GROUP]));
        }
    }
}

#[test]
fn budget_truncates() {
    let m = model(Variant::Hg2);
    let s = sample_unconditional(&m, &SamplerConfig { max_new_tokens: 13, top_k: 1, ..Default::default() }).unwrap();
    assert!(s.tokens.len() <= GROUP + 13);
}

#[test]
fn greedy_is_temperature_zero() {
    let m = model(Variant::Hg1);
    let a = sample_unconditional(&m, &SamplerConfig { seed: 1, max_new_tokens: 64, ..SamplerConfig::greedy() }).unwrap();
    let b = sample_unconditional(&m, &SamplerConfig { seed: 2, max_new_tokens: 64, ..SamplerConfig::greedy() }).unwrap();
    assert_eq!(a, b);
    assert!(SamplerConfig { temperature: -1.0, ..Default::default() }.validate().is_err());
}

#[test]
fn completions_keep_the_prompt() {
    let t = trees();
    let spec = SequenceSpec::new(Quantizer::fit(&t).unwrap(), OrderStrategy::Dfs, 30);
    let m = model(Variant::Hg2Rl);
    let partial = TreeSkeleton::new(t[0].branches[..3].to_vec());
    let prompt = completion_prompt(&spec, &partial, false).unwrap();
    assert_eq!(prompt.len(), GROUP * 4);
    let outs = complete(&m, &spec, &partial, false, 3, &SamplerConfig { max_new_tokens: 64, ..Default::default() }).unwrap();
    for s in &outs {
        assert_eq!(&s.tokens[..prompt.len()], &prompt[..]);
        assert_eq!(s.prompt_len, prompt.len());
    }
}

#[test]
fn closed_prompt_returns_the_quantized_partial_tree() {
    let t = trees();
    let spec = SequenceSpec::new(Quantizer::fit(&t).unwrap(), OrderStrategy::Dfs, 30);
    let m = model(Variant::Hg2);
    let partial = TreeSkeleton::new(t[1].branches[..2].to_vec());
    let s = &complete(&m, &spec, &partial, true, 1, &SamplerConfig::default()).unwrap()[0];
    assert_eq!(s.tokens.len(), GROUP * 4);
    let expect = detokenize(&completion_prompt(&spec, &partial, true).unwrap(), &spec.quantizer).unwrap().tree;
    assert_eq!(s.to_tree(&spec).unwrap(), expect);
}

#[test]
fn prompt_must_open_with_sos() {
    let m = model(Variant::Hg2);
    let err = sample_frames(&m, None, &[EOS; GROUP], 1, &SamplerConfig::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidParams(_)));
}

#[test]
fn conditional_sampling_runs_with_a_zero_prefix() {
    let cfg = ModelConfig { cond_queries: 4, cond_points: 32, ..model(Variant::Hg2Rl).config };
    let m = HourglassModel::<f64>::new(cfg, 3).unwrap();
    let prefix = vec![0.0; m.config.prefix_len() * m.config.dim];
    let s = sample_conditional(&m, &prefix, &SamplerConfig { seed: 2, max_new_tokens: 80, ..Default::default() }).unwrap();
    well_formed(&s.tokens);
    let t = trees();
    let pc = sample_point_cloud(&t[0], 32, 0);
    let p = encode_point_cloud(&m, &pc).unwrap();
    assert_eq!(p.len(), prefix.len());
    assert!(encode_point_cloud(&m, &[]).is_err());
}

#[test]
fn growth_frames_round_trip() {
    let gs = normalize_growth(&generate_procedural(&ProceduralParams::sapling(5), 30).unwrap()).unwrap();
    let q = Quantizer::fit(&gs.stages).unwrap();
    let layout = GrowthLayout::fitted(vec![30; GROWTH_STAGES]);
    let mut spec = SequenceSpec::new(q, OrderStrategy::Dfs, 30);
    spec.growth = Some(layout.clone());
    let toks = tokenize_growth(&gs, OrderStrategy::Dfs, DEFAULT_EPS_CONNECT, &spec.quantizer, &layout).unwrap();
    let back = growth_from_tokens(&toks.tokens, &spec).unwrap();
    assert_eq!(back.stages.len(), GROWTH_STAGES);
    for (a, b) in back.stages.iter().zip(&gs.stages) {
        assert_eq!(a.len(), b.len());
    }
    let five: usize = split_stage_frames(&toks.tokens)[..5].iter().map(|f| f.len()).sum();
    let err = growth_from_tokens(&toks.tokens[..five], &spec).unwrap_err();
    assert!(matches!(err, Error::MalformedGrowth { recovered: 5 }));
}

#[test]
fn agreement_helpers() {
    assert_eq!(token_agreement(&[1, 2, 3, 4], &[1, 2, 9, 4]), 0.75);
    assert_eq!(token_agreement(&[1, 2], &[1, 2, 3, 4]), 0.5);
    assert_eq!(value_count(&[SOS, 3, 255, EOS, PAD]), 2);
}
