//! Recorded (differentiable) forward pass.

use super::{BlockIds, HourglassModel, PointEncoderIds};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, Scalar, Var};
use crate::tokenizer::{Token, GROUP};

/// Per-tape cache so each parameter is copied onto the tape once.
struct Ctx<'g, 'p, T: Scalar> {
    g: &'g mut Graph<'p, T>,
    vars: Vec<Option<Var>>,
}

impl<T: Scalar> Ctx<'_, '_, T> {
    fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let v = self.g.param(id);
        self.vars[id.0] = Some(v);
        v
    }

    fn block(&mut self, x: Var, b: &BlockIds, heads: usize) -> Result<Var> {
        let (g1, b1) = (self.p(b.ln1_g), self.p(b.ln1_b));
        let h = self.g.layer_norm(x, g1, b1)?;
        let (wq, bq, wk, bk, wv, bv) = (self.p(b.wq), self.p(b.bq), self.p(b.wk), self.p(b.bk), self.p(b.wv), self.p(b.bv));
        let q = self.g.linear(h, wq, Some(bq))?;
        let k = self.g.linear(h, wk, Some(bk))?;
        let v = self.g.linear(h, wv, Some(bv))?;
        let a = self.g.attention(q, k, v, heads, true)?;
        let (wo, bo) = (self.p(b.wo), self.p(b.bo));
        let a = self.g.linear(a, wo, Some(bo))?;
        let x = self.g.add(x, a)?;
        let (g2, b2) = (self.p(b.ln2_g), self.p(b.ln2_b));
        let h = self.g.layer_norm(x, g2, b2)?;
        let (w1, bb1, w2, bb2) = (self.p(b.w1), self.p(b.b1), self.p(b.w2), self.p(b.b2));
        let h = self.g.linear(h, w1, Some(bb1))?;
        let h = self.g.gelu(h);
        let h = self.g.linear(h, w2, Some(bb2))?;
        self.g.add(x, h)
    }

    /// Shifts rows down by `s`, filling the top with `fill` (or zeros).
    fn shift_right(&mut self, x: Var, s: usize, fill: Option<ParamId>) -> Result<Var> {
        if s == 0 {
            return Ok(x);
        }
        let [n, d] = self.g.shape(x);
        let head = match fill {
            Some(id) => {
                let row = self.p(id);
                self.g.repeat(row, s)
            }
            None => self.g.zeros(s, d),
        };
        let body = self.g.slice_rows(x, 0, n - s)?;
        self.g.concat_rows(&[head, body])
    }

    fn add_pos(&mut self, x: Var, table: ParamId) -> Result<Var> {
        let n = self.g.shape(x)[0];
        let t = self.p(table);
        let pos = self.g.slice_rows(t, 0, n)?;
        self.g.add(x, pos)
    }
}

impl<T: Scalar> HourglassModel<T> {
    fn ctx<'g, 'p>(&self, g: &'g mut Graph<'p, T>) -> Ctx<'g, 'p, T> {
        Ctx { g, vars: vec![None; self.params.len()] }
    }

    /// Logits `[n, vocab]` for `tokens` after an optional `[prefix_len, dim]`
    /// conditioning prefix, where `n = prefix_len + tokens.len()`. Row `i`
    /// scores the token at position `i + 1`. `g` must record over
    /// `self.params`.
    pub fn forward(&self, g: &mut Graph<'_, T>, tokens: &[Token], prefix: Option<Var>) -> Result<Var> {
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let table = g.param(self.layout.tok_emb);
        let x = g.embedding(table, &ids)?;
        let x = match prefix {
            Some(p) => {
                let want = [self.config.prefix_len(), self.config.dim];
                if g.shape(p) != want {
                    return Err(Error::shape("conditioning prefix", &g.shape(p), &want));
                }
                g.concat_rows(&[p, x])?
            }
            None => {
                if self.config.prefix_len() > 0 {
                    return Err(Error::shape("conditioning prefix", &[0], &[self.config.prefix_len()]));
                }
                x
            }
        };
        self.forward_embeddings(g, x)
    }

    /// Forward from full-resolution input embeddings `[n, dim]`.
    pub fn forward_embeddings(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let [n, d] = g.shape(x);
        if d != self.config.dim || n == 0 || n % GROUP != 0 || n > self.config.context {
            return Err(Error::shape("forward input", &[n, d], &[self.config.context, self.config.dim]));
        }
        let mut c = self.ctx(g);
        let x = c.add_pos(x, self.layout.pos[0])?;
        let y = self.level(&mut c, x, 0)?;
        let (gf, bf) = (c.p(self.layout.ln_f_g), c.p(self.layout.ln_f_b));
        let y = c.g.layer_norm(y, gf, bf)?;
        let (hw, hb) = (c.p(self.layout.head_w), c.p(self.layout.head_b));
        c.g.linear(y, hw, Some(hb))
    }

    fn level(&self, c: &mut Ctx<'_, '_, T>, x: Var, lvl: usize) -> Result<Var> {
        let heads = self.config.heads;
        if lvl == self.config.levels() {
            return self.core(c, x);
        }
        let k = self.config.factors()[lvl];
        let enc = c.block(x, &self.layout.enc[lvl], heads)?;
        let shifted = c.shift_right(enc, self.config.pool_shift(k), self.layout.boundary[lvl])?;
        let pooled = c.g.mean_pool(shifted, k)?;
        let pooled = c.add_pos(pooled, self.layout.pos[lvl + 1])?;
        let inner = self.level(c, pooled, lvl + 1)?;
        let up = c.g.repeat(inner, k);
        let offset = usize::from(!self.config.ablation.no_skip_offset);
        let up = c.shift_right(up, offset, None)?;
        let merged = c.g.add(up, enc)?;
        c.block(merged, &self.layout.dec[lvl], heads)
    }

    fn core(&self, c: &mut Ctx<'_, '_, T>, mut x: Var) -> Result<Var> {
        let links = self.config.bottleneck_links();
        let mut outs: Vec<Var> = Vec::with_capacity(self.layout.core.len());
        for (j, block) in self.layout.core.iter().enumerate() {
            if let Some(&(_, src)) = links.iter().find(|&&(dst, _)| dst == j) {
                let skip = match self.layout.alpha[j] {
                    Some(a) => {
                        let a = c.p(a);
                        c.g.mul_row(outs[src], a)?
                    }
                    None => outs[src],
                };
                x = c.g.add(x, skip)?;
            }
            x = c.block(x, block, self.config.heads)?;
            outs.push(x);
        }
        Ok(x)
    }

    /// Conditioning prefix `[prefix_len, dim]` from a point cloud; invariant
    /// to the order of `points`.
    pub fn encode_points(&self, g: &mut Graph<'_, T>, points: &[[f64; 3]]) -> Result<Var> {
        let pe: &PointEncoderIds = self
            .layout
            .point_encoder
            .as_ref()
            .ok_or_else(|| Error::InvalidParams("model has no point-cloud encoder".into()))?;
        if points.len() != self.config.cond_points {
            return Err(Error::shape("point cloud", &[points.len(), 3], &[self.config.cond_points, 3]));
        }
        let flat = points.iter().flat_map(|p| p.iter().map(|&v| T::c(v))).collect();
        let mut c = self.ctx(g);
        let pts = c.g.input(flat, points.len(), 3)?;
        let (w, b) = (c.p(pe.in_w), c.p(pe.in_b));
        let h = c.g.linear(pts, w, Some(b))?;
        let h = c.g.gelu(h);
        let (w, b) = (c.p(pe.hid_w), c.p(pe.hid_b));
        let h = c.g.linear(h, w, Some(b))?;
        let (lg, lb) = (c.p(pe.ln_kv_g), c.p(pe.ln_kv_b));
        let kv = c.g.layer_norm(h, lg, lb)?;
        let queries = c.p(pe.queries);
        let (lg, lb) = (c.p(pe.ln_q_g), c.p(pe.ln_q_b));
        let qn = c.g.layer_norm(queries, lg, lb)?;
        let (wq, bq, wk, bk, wv, bv) = (c.p(pe.wq), c.p(pe.bq), c.p(pe.wk), c.p(pe.bk), c.p(pe.wv), c.p(pe.bv));
        let q = c.g.linear(qn, wq, Some(bq))?;
        let k = c.g.linear(kv, wk, Some(bk))?;
        let v = c.g.linear(kv, wv, Some(bv))?;
        let a = c.g.attention(q, k, v, self.config.heads, false)?;
        let (wo, bo) = (c.p(pe.wo), c.p(pe.bo));
        let a = c.g.linear(a, wo, Some(bo))?;
        let out = c.g.add(queries, a)?;
        match pe.pad {
            Some(pad) => {
                let pad = c.p(pad);
                c.g.concat_rows(&[out, pad])
            }
            None => Ok(out),
        }
    }

    /// Inference convenience: full logits `[n, vocab]` as a flat buffer.
    pub fn logits(&self, tokens: &[Token], points: Option<&[[f64; 3]]>) -> Result<Vec<T>> {
        let mut g = Graph::new(&self.params);
        let prefix = points.map(|p| self.encode_points(&mut g, p)).transpose()?;
        let out = self.forward(&mut g, tokens, prefix)?;
        Ok(g.value(out).to_vec())
    }
}
