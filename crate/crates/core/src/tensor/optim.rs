//! AdamW with decoupled weight decay, and the warmup + cosine schedule.

use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment accumulators, kept in the parameter precision.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &ParamStore<T>, config: AdamWConfig) -> Self {
        let zeros = |id| vec![T::zero(); params.value(id).len()];
        Self {
            config,
            step: 0,
            m: params.ids().map(zeros).collect(),
            v: params.ids().map(zeros).collect(),
        }
    }

    /// One bias-corrected update at learning rate `lr`. Weight decay applies
    /// only to parameters flagged for it.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>, lr: f64) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::NonFinite(format!("gradient at optimizer step {}", self.step + 1)));
        }
        if self.m.len() != params.len() {
            return Err(Error::InternalState("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let (ob1, ob2) = (T::c(1.0 - c.beta1), T::c(1.0 - c.beta2));
        let step_size = T::c(lr / bc1);
        let inv_sqrt_bc2 = T::c(1.0 / bc2.sqrt());
        let eps = T::c(c.eps);
        for id in params.ids().collect::<Vec<_>>() {
            let shrink = if params.decays(id) { T::c(1.0 - lr * c.weight_decay) } else { T::one() };
            let g = grads.get(id);
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for (((p, &g), m), v) in params.value_mut(id).iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + ob1 * g;
                *v = b2 * *v + ob2 * g * g;
                *p = *p * shrink - step_size * *m / ((*v).sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `peak` over `warmup` steps, then cosine decay to 0
/// at `total`.
pub fn lr_schedule(step: u64, warmup: u64, total: u64, peak: f64) -> Result<f64> {
    if warmup >= total {
        return Err(Error::InvalidSchedule(format!("warmup {warmup} must be below total {total}")));
    }
    let step = step.min(total);
    if step < warmup {
        return Ok(peak * step as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(0.5 * peak * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(p: f64, decay: bool) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("p", &[1], vec![p], decay);
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let mut s = scalar_store(0.7, true);
        let g = Grads::zeros_like(&s);
        let mut opt = AdamW::new(&s, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        opt.step(&mut s, &g, 0.1).unwrap();
        assert_eq!(s.value(s.ids().next().unwrap()), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(1.0, true);
        let mut g = Grads::zeros_like(&s);
        g.values[0][0] = 1.0;
        let mut opt = AdamW::new(&s, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        opt.step(&mut s, &g, 0.1).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction: p = 1 - 0.1 * 1 / (1 + 1e-8)
        let expect = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((s.value(s.ids().next().unwrap())[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn decay_is_multiplicative_shrink() {
        let mut s = scalar_store(2.0, true);
        let g = Grads::zeros_like(&s);
        let mut opt = AdamW::new(&s, AdamWConfig { weight_decay: 0.5, ..Default::default() });
        opt.step(&mut s, &g, 0.1).unwrap();
        assert!((s.value(s.ids().next().unwrap())[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut s = scalar_store(1.0, true);
        let mut g = Grads::zeros_like(&s);
        g.values[0][0] = f64::NAN;
        let mut opt = AdamW::new(&s, AdamWConfig::default());
        assert!(matches!(opt.step(&mut s, &g, 0.1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn schedule_landmarks() {
        assert_eq!(lr_schedule(0, 10, 110, 5e-3).unwrap(), 0.0);
        assert_eq!(lr_schedule(10, 10, 110, 5e-3).unwrap(), 5e-3);
        assert!((lr_schedule(60, 10, 110, 5e-3).unwrap() - 2.5e-3).abs() < 1e-15);
        assert!(lr_schedule(110, 10, 110, 5e-3).unwrap().abs() < 1e-18);
        assert!(matches!(lr_schedule(0, 10, 10, 1.0), Err(Error::InvalidSchedule(_))));
    }
}
