use log::warn;

use crate::error::{Error, Result};
use crate::numeric::{Gradients, ParamStore, Tensor2};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `<= 0` disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            clip_norm: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Adaptive-moment optimizer with decoupled weight decay. Moments are kept
/// per parameter tensor in the parameters' scalar type.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor2<T>>,
    pub v: Vec<Tensor2<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &ParamStore<T>, cfg: AdamWConfig) -> Self {
        let zeros: Vec<Tensor2<T>> = params.iter().map(|(_, _, t)| Tensor2::zeros(t.rows(), t.cols())).collect();
        AdamW {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Clips, then applies one update. Non-finite gradients abort the update
    /// and leave parameters and moments untouched.
    pub fn apply(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<StepInfo> {
        if self.m.len() != params.len() {
            return Err(Error::shape("optimizer state does not match the parameter set"));
        }
        if !grads.is_finite() {
            warn!("skipping optimizer step: non-finite gradient");
            return Err(Error::NonFinite("gradient".into()));
        }
        let norm = grads.global_norm().as_f64();
        let c = &self.cfg;
        let scale = if c.clip_norm > 0.0 && norm > c.clip_norm { c.clip_norm / norm } else { 1.0 };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (lr, wd, eps) = (T::of(c.lr), T::of(c.weight_decay), T::of(c.eps));
        let (bc1, bc2, scale) = (T::of(bc1), T::of(bc2), T::of(scale));
        for id in params.ids().collect::<Vec<_>>() {
            let i = id.index();
            let g = grads.get(id);
            let p = params.get_mut(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.len() {
                let gk = g.map_or(T::zero(), |g| g.data()[k] * scale);
                let mk = b1 * m.data()[k] + (T::one() - b1) * gk;
                let vk = b2 * v.data()[k] + (T::one() - b2) * gk * gk;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                let theta = p.data()[k];
                let update = (mk / bc1) / ((vk / bc2).sqrt() + eps);
                p.data_mut()[k] = theta - lr * wd * theta - lr * update;
            }
        }
        Ok(StepInfo {
            grad_norm: norm,
            clipped: scale < T::one(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tape;

    fn scalar_store(v: f64) -> (ParamStore<f64>, crate::numeric::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor2::scalar(v)).unwrap();
        (s, id)
    }

    fn grad_of(store: &ParamStore<f64>, id: crate::numeric::ParamId, k: f64) -> Gradients<f64> {
        let mut tape = Tape::new();
        let x = tape.param(store, id);
        let y = tape.scale(x, k).unwrap();
        tape.backward_scalar(y).unwrap()
    }

    #[test]
    fn zero_gradient_only_decays() {
        let (mut s, id) = scalar_store(2.0);
        let mut opt = AdamW::new(
            &s,
            AdamWConfig {
                lr: 0.1,
                weight_decay: 0.01,
                ..AdamWConfig::default()
            },
        );
        {
            let g = grad_of(&s, id, 0.0);
            opt.apply(&mut s, &g)
        }
        .unwrap();
        assert!((s.get(id).item() - (2.0 - 0.1 * 0.01 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn clipping_scales_gradient() {
        let (mut s, id) = scalar_store(0.0);
        let mut opt = AdamW::new(
            &s,
            AdamWConfig {
                clip_norm: 1.0,
                ..AdamWConfig::default()
            },
        );
        let info = {
            let g = grad_of(&s, id, 10.0);
            opt.apply(&mut s, &g)
        }
        .unwrap();
        assert!(info.clipped);
        assert_eq!(info.grad_norm, 10.0);
        assert!((opt.m[0].item() - 0.1 * 1.0).abs() < 1e-15);
    }

    #[test]
    fn scalar_recursion_reference() {
        let (mut s, id) = scalar_store(1.0);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 1e-4,
            clip_norm: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(&s, cfg);
        let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            {
                let g = grad_of(&s, id, 1.0);
                opt.apply(&mut s, &g)
            }
            .unwrap();
            m = 0.9 * m + 0.1;
            v = 0.999 * v + 0.001;
            let mhat = m / (1.0 - 0.9f64.powi(t));
            let vhat = v / (1.0 - 0.999f64.powi(t));
            theta = theta - 0.1 * 1e-4 * theta - 0.1 * mhat / (vhat.sqrt() + 1e-8);
            assert!((s.get(id).item() - theta).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let (mut s, id) = scalar_store(1.0);
        let mut opt = AdamW::new(&s, AdamWConfig::default());
        let g = grad_of(&s, id, f64::NAN);
        assert!(opt.apply(&mut s, &g).is_err());
        assert_eq!(s.get(id).item(), 1.0);
        assert_eq!(opt.step, 0);
    }
}
