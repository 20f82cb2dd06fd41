use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{BlockIds, BoundaryFill, Layout, ModelConfig, PointEncoderIds, Variant};
use crate::tensor::{ParamId, ParamStore, Scalar};

const INIT_STD: f64 = 0.02;

struct Builder<T> {
    store: ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<T> {
    fn normal(&mut self, name: String, shape: &[usize], std: f64, decay: bool) -> ParamId {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("valid std");
        let v = (0..n).map(|_| T::c(dist.sample(&mut self.rng))).collect();
        self.store.add(name, shape, v, decay)
    }

    fn fill(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        let n: usize = shape.iter().product();
        self.store.add(name, shape, vec![T::c(value); n], false)
    }

    fn block(&mut self, prefix: &str, d: usize, hidden: usize, out_std: f64) -> BlockIds {
        let p = |s: &str| format!("{prefix}.{s}");
        BlockIds {
            ln1_g: self.fill(p("ln1.g"), &[d], 1.0),
            ln1_b: self.fill(p("ln1.b"), &[d], 0.0),
            wq: self.normal(p("attn.wq"), &[d, d], INIT_STD, true),
            bq: self.fill(p("attn.bq"), &[d], 0.0),
            wk: self.normal(p("attn.wk"), &[d, d], INIT_STD, true),
            bk: self.fill(p("attn.bk"), &[d], 0.0),
            wv: self.normal(p("attn.wv"), &[d, d], INIT_STD, true),
            bv: self.fill(p("attn.bv"), &[d], 0.0),
            wo: self.normal(p("attn.wo"), &[d, d], out_std, true),
            bo: self.fill(p("attn.bo"), &[d], 0.0),
            ln2_g: self.fill(p("ln2.g"), &[d], 1.0),
            ln2_b: self.fill(p("ln2.b"), &[d], 0.0),
            w1: self.normal(p("mlp.w1"), &[d, hidden], INIT_STD, true),
            b1: self.fill(p("mlp.b1"), &[hidden], 0.0),
            w2: self.normal(p("mlp.w2"), &[hidden, d], out_std, true),
            b2: self.fill(p("mlp.b2"), &[d], 0.0),
        }
    }
}

pub(super) fn build<T: Scalar>(c: &ModelConfig, seed: u64) -> (ParamStore<T>, Layout) {
    let mut b = Builder { store: ParamStore::new(), rng: ChaCha8Rng::seed_from_u64(seed) };
    let d = c.dim;
    let hidden = d * c.mlp_ratio;
    let out_std = INIT_STD / (2.0 * c.layers as f64).sqrt();

    let tok_emb = b.normal("tok_emb".into(), &[c.vocab, d], INIT_STD, false);
    let mut pos = vec![b.normal("pos.0".into(), &[c.context, d], INIT_STD, false)];
    let mut boundary = Vec::new();
    let mut div = 1;
    for (lvl, &k) in c.factors().iter().enumerate() {
        div *= k;
        pos.push(b.normal(format!("pos.{}", lvl + 1), &[c.context / div, d], INIT_STD, false));
        boundary.push(match c.boundary {
            BoundaryFill::Learned => Some(b.normal(format!("boundary.{lvl}"), &[d], INIT_STD, false)),
            BoundaryFill::Zero => None,
        });
    }
    let enc = (0..c.levels()).map(|l| b.block(&format!("enc.{l}"), d, hidden, out_std)).collect();
    let core: Vec<BlockIds> = (0..c.core_layers()).map(|l| b.block(&format!("core.{l}"), d, hidden, out_std)).collect();
    let mut alpha = vec![None; core.len()];
    if c.variant == Variant::Hg2Rl {
        for (j, _) in c.bottleneck_links() {
            alpha[j] = Some(b.fill(format!("alpha.{j}"), &[d], 0.0));
        }
    }
    let dec = (0..c.levels()).map(|l| b.block(&format!("dec.{l}"), d, hidden, out_std)).collect();
    let ln_f_g = b.fill("ln_f.g".into(), &[d], 1.0);
    let ln_f_b = b.fill("ln_f.b".into(), &[d], 0.0);
    let head_w = b.normal("head.w".into(), &[d, c.vocab], INIT_STD, true);
    let head_b = b.fill("head.b".into(), &[c.vocab], 0.0);

    let point_encoder = (c.cond_queries > 0).then(|| {
        let p = |s: &str| format!("pc.{s}");
        PointEncoderIds {
            in_w: b.normal(p("in.w"), &[3, d], 1.0 / 3f64.sqrt(), true),
            in_b: b.fill(p("in.b"), &[d], 0.0),
            hid_w: b.normal(p("hid.w"), &[d, d], 1.0 / (d as f64).sqrt(), true),
            hid_b: b.fill(p("hid.b"), &[d], 0.0),
            queries: b.normal(p("queries"), &[c.cond_queries, d], INIT_STD, false),
            ln_q_g: b.fill(p("ln_q.g"), &[d], 1.0),
            ln_q_b: b.fill(p("ln_q.b"), &[d], 0.0),
            ln_kv_g: b.fill(p("ln_kv.g"), &[d], 1.0),
            ln_kv_b: b.fill(p("ln_kv.b"), &[d], 0.0),
            wq: b.normal(p("wq"), &[d, d], INIT_STD, true),
            bq: b.fill(p("bq"), &[d], 0.0),
            wk: b.normal(p("wk"), &[d, d], INIT_STD, true),
            bk: b.fill(p("bk"), &[d], 0.0),
            wv: b.normal(p("wv"), &[d, d], INIT_STD, true),
            bv: b.fill(p("bv"), &[d], 0.0),
            wo: b.normal(p("wo"), &[d, d], INIT_STD, true),
            bo: b.fill(p("bo"), &[d], 0.0),
            pad: (c.prefix_len() > c.cond_queries)
                .then(|| b.normal(p("pad"), &[c.prefix_len() - c.cond_queries, d], INIT_STD, false)),
        }
    });

    let layout = Layout {
        tok_emb,
        pos,
        boundary,
        enc,
        dec,
        core,
        alpha,
        ln_f_g,
        ln_f_b,
        head_w,
        head_b,
        point_encoder,
    };
    (b.store, layout)
}
