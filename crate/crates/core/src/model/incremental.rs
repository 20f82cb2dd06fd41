//! Position-by-position decoding with key/value caches.
//!
//! The two causal offsets make each pooled group complete exactly when the
//! decoder first needs it, so a new token never triggers recomputation of
//! earlier positions at any level.

use super::{BlockIds, HourglassModel};
use crate::error::{Error, Result};
use crate::tensor::kernels::{self, MatRef};
use crate::tensor::{ParamId, Scalar};
use crate::tokenizer::Token;

#[derive(Debug, Clone, Default)]
struct KvCache<T> {
    k: Vec<T>,
    v: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct IncrementalDecoder<'m, T> {
    model: &'m HourglassModel<T>,
    /// enc[l], then dec[l], then core[j].
    caches: Vec<KvCache<T>>,
    /// Encoder outputs per outer level, row-major.
    enc_out: Vec<Vec<T>>,
    /// Output rows of each level below the top, indexed by level.
    level_out: Vec<Vec<T>>,
    steps: Vec<usize>,
}

impl<'m, T: Scalar> IncrementalDecoder<'m, T> {
    pub fn new(model: &'m HourglassModel<T>) -> Self {
        let levels = model.config.levels();
        let n_caches = 2 * levels + model.layout.core.len();
        Self {
            model,
            caches: vec![KvCache::default(); n_caches],
            enc_out: vec![Vec::new(); levels],
            level_out: vec![Vec::new(); levels + 1],
            steps: vec![0; levels + 1],
        }
    }

    /// Full-resolution positions consumed so far.
    pub fn len(&self) -> usize {
        self.steps[0]
    }

    pub fn is_empty(&self) -> bool {
        self.steps[0] == 0
    }

    fn p(&self, id: ParamId) -> &'m [T] {
        self.model.params.value(id)
    }

    /// Feeds one token; returns the logits row predicting the next one.
    pub fn step_token(&mut self, token: Token) -> Result<Vec<T>> {
        let d = self.model.config.dim;
        let t = token as usize;
        if t >= self.model.config.vocab {
            return Err(Error::shape("token", &[t], &[self.model.config.vocab]));
        }
        let row = self.p(self.model.layout.tok_emb)[t * d..(t + 1) * d].to_vec();
        self.step_embedding(row)
    }

    /// Feeds one precomputed input embedding (e.g. a conditioning row).
    pub fn step_embedding(&mut self, row: Vec<T>) -> Result<Vec<T>> {
        let model = self.model;
        let cfg = &model.config;
        if row.len() != cfg.dim {
            return Err(Error::shape("embedding row", &[row.len()], &[cfg.dim]));
        }
        if self.steps[0] >= cfg.context {
            return Err(Error::Capacity(format!("context of {} positions exhausted", cfg.context)));
        }
        let y = self.run_level(0, row)?;
        let l = &model.layout;
        let mut h = vec![T::zero(); cfg.dim];
        kernels::layer_norm_row(&y, self.p(l.ln_f_g), self.p(l.ln_f_b), &mut h);
        Ok(linear_row(&h, self.p(l.head_w), self.p(l.head_b)))
    }

    fn run_level(&mut self, lvl: usize, mut x: Vec<T>) -> Result<Vec<T>> {
        let model = self.model;
        let cfg = &model.config;
        let layout = &model.layout;
        let d = cfg.dim;
        let p = self.steps[lvl];
        self.steps[lvl] += 1;
        let pos = self.p(layout.pos[lvl]);
        if (p + 1) * d > pos.len() {
            return Err(Error::Capacity(format!("level {lvl} position {p} beyond context")));
        }
        x.iter_mut().zip(&pos[p * d..(p + 1) * d]).for_each(|(a, &b)| *a += b);
        if lvl == cfg.levels() {
            return Ok(self.run_core(x));
        }
        let k = cfg.factors()[lvl];
        let enc = self.block(lvl, &layout.enc[lvl], &x);
        self.enc_out[lvl].extend_from_slice(&enc);

        let s = cfg.pool_shift(k);
        if (p + s + 1).is_multiple_of(k) {
            let g = (p + s + 1) / k - 1;
            let mut pooled = vec![T::zero(); d];
            for i in g * k..(g + 1) * k {
                let src: &[T] = match i.checked_sub(s) {
                    Some(j) => &self.enc_out[lvl][j * d..(j + 1) * d],
                    None => match layout.boundary[lvl] {
                        Some(b) => self.p(b),
                        None => &[],
                    },
                };
                pooled.iter_mut().zip(src).for_each(|(a, &b)| *a += b);
            }
            let inv = T::one() / T::c(k as f64);
            pooled.iter_mut().for_each(|a| *a *= inv);
            let inner = self.run_level(lvl + 1, pooled)?;
            self.level_out[lvl + 1].extend_from_slice(&inner);
        }

        let src = if cfg.ablation.no_skip_offset { Some(p) } else { p.checked_sub(1) };
        let mut merged = enc;
        if let Some(src) = src {
            let g = src / k;
            let inner = self.level_out[lvl + 1]
                .get(g * d..(g + 1) * d)
                .ok_or_else(|| Error::InternalState(format!("level {} group {g} not yet available", lvl + 1)))?;
            merged.iter_mut().zip(inner).for_each(|(a, &b)| *a += b);
        }
        let levels = cfg.levels();
        Ok(self.block(levels + lvl, &layout.dec[lvl], &merged))
    }

    fn run_core(&mut self, mut x: Vec<T>) -> Vec<T> {
        let model = self.model;
        let cfg = &model.config;
        let layout = &model.layout;
        let links = cfg.bottleneck_links();
        let base = 2 * cfg.levels();
        let mut outs: Vec<Vec<T>> = Vec::with_capacity(layout.core.len());
        for (j, block) in layout.core.iter().enumerate() {
            if let Some(&(_, src)) = links.iter().find(|&&(dst, _)| dst == j) {
                match layout.alpha[j] {
                    Some(a) => {
                        let a = self.p(a);
                        for ((xi, &o), &ai) in x.iter_mut().zip(&outs[src]).zip(a) {
                            *xi += o * ai;
                        }
                    }
                    None => x.iter_mut().zip(&outs[src]).for_each(|(xi, &o)| *xi += o),
                }
            }
            x = self.block(base + j, block, &x);
            outs.push(x.clone());
        }
        x
    }

    fn block(&mut self, cache: usize, b: &BlockIds, x: &[T]) -> Vec<T> {
        let d = x.len();
        let heads = self.model.config.heads;
        let hd = d / heads;
        let mut h = vec![T::zero(); d];
        kernels::layer_norm_row(x, self.p(b.ln1_g), self.p(b.ln1_b), &mut h);
        let q = linear_row(&h, self.p(b.wq), self.p(b.bq));
        let k = linear_row(&h, self.p(b.wk), self.p(b.bk));
        let v = linear_row(&h, self.p(b.wv), self.p(b.bv));
        let c = &mut self.caches[cache];
        c.k.extend_from_slice(&k);
        c.v.extend_from_slice(&v);
        let n = c.k.len() / d;
        let scale = T::one() / T::c(hd as f64).sqrt();
        let mut att = vec![T::zero(); d];
        let mut scores = vec![T::zero(); n];
        for hh in 0..heads {
            let qh = &q[hh * hd..(hh + 1) * hd];
            for (j, s) in scores.iter_mut().enumerate() {
                *s = scale * kernels::dot(qh, &c.k[j * d + hh * hd..j * d + (hh + 1) * hd]);
            }
            kernels::softmax_row(&mut scores);
            let out = &mut att[hh * hd..(hh + 1) * hd];
            for (j, &pj) in scores.iter().enumerate() {
                let vj = &c.v[j * d + hh * hd..j * d + (hh + 1) * hd];
                out.iter_mut().zip(vj).for_each(|(o, &v)| *o += pj * v);
            }
        }
        let a = linear_row(&att, self.p(b.wo), self.p(b.bo));
        let x1: Vec<T> = x.iter().zip(&a).map(|(&p, &q)| p + q).collect();
        kernels::layer_norm_row(&x1, self.p(b.ln2_g), self.p(b.ln2_b), &mut h);
        let mut m = linear_row(&h, self.p(b.w1), self.p(b.b1));
        m.iter_mut().for_each(|v| *v = kernels::gelu(*v));
        let m = linear_row(&m, self.p(b.w2), self.p(b.b2));
        x1.iter().zip(&m).map(|(&p, &q)| p + q).collect()
    }
}

/// `x @ w + b` for a single row, `w: [x.len(), b.len()]`.
fn linear_row<T: Scalar>(x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let n = b.len();
    let mut out = b.to_vec();
    kernels::gemm(T::one(), MatRef::new(x, 1, x.len()), MatRef::new(w, x.len(), n), T::one(), &mut out, n);
    out
}
