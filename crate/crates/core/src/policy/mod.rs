//! The connectome-structured controller, the MLP baseline and shared
//! policy plumbing (observation normalization, Gaussian action heads).

mod flygm;
mod mlp;
mod norm;

use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tape, Tensor2, Var};
use crate::scalar::Scalar;

pub use flygm::{FlyGm, FlyGmConfig};
pub use mlp::{MlpConfig, MlpPolicy};
pub use norm::RunningNorm;

/// Added to every softplus standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// `softplus(x) + SIGMA_FLOOR`, the standard-deviation nonlinearity.
pub fn softplus_floor<T: Scalar>(x: T) -> T {
    crate::numeric::softplus(x) + T::of(SIGMA_FLOOR)
}

/// Diagonal Gaussian over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDist<T> {
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
}

impl<T: Scalar> ActionDist<T> {
    pub fn new(mu: Vec<T>, sigma: Vec<T>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::shape("mu and sigma lengths differ"));
        }
        if sigma.iter().any(|&s| !(s > T::zero())) {
            return Err(Error::invalid("sigma must be strictly positive"));
        }
        Ok(ActionDist { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `(log p(a), entropy)`.
    pub fn log_prob_and_entropy(&self, a: &[T]) -> Result<(T, T)> {
        log_prob_and_entropy(&self.mu, &self.sigma, a)
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> Vec<T> {
        use rand_distr::{Distribution, StandardNormal};
        self.mu
            .iter()
            .zip(&self.sigma)
            .map(|(&m, &s)| {
                let z: f64 = StandardNormal.sample(rng);
                m + s * T::of(z)
            })
            .collect()
    }
}

pub fn log_prob_and_entropy<T: Scalar>(mu: &[T], sigma: &[T], a: &[T]) -> Result<(T, T)> {
    if mu.len() != sigma.len() || mu.len() != a.len() {
        return Err(Error::shape("log_prob: dimension mismatch"));
    }
    if sigma.iter().any(|&s| !(s > T::zero())) {
        return Err(Error::invalid("sigma must be strictly positive"));
    }
    let half_log_2pi = T::of(0.5 * (2.0 * std::f64::consts::PI).ln());
    let half_log_2pie = T::of(0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln());
    let mut lp = T::zero();
    let mut ent = T::zero();
    for ((&m, &s), &x) in mu.iter().zip(sigma).zip(a) {
        let z = (x - m) / s;
        lp = lp - s.ln() - half_log_2pi - T::of(0.5) * z * z;
        ent = ent + half_log_2pie + s.ln();
    }
    Ok((lp, ent))
}

/// Outputs of one taped policy step over a batch.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    /// `batch x d_out`
    pub mu: Var,
    /// `batch x d_out`
    pub sigma: Var,
    /// Recurrent state after the step.
    pub state: Var,
}

/// Interface shared by the graph policy and the MLP baseline.
pub trait Policy<T: Scalar>: Send + Sync {
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn kind(&self) -> &'static str;

    /// Zero state for `batch` parallel sequences (empty for stateless policies).
    fn initial_state(&self, batch: usize) -> Tensor2<T>;

    /// Records one control step for `batch` sequences. `obs` is the
    /// normalized `batch x obs_dim` observation.
    fn step(&self, tape: &mut Tape<T>, params: &ParamStore<T>, state: Var, obs: Var, batch: usize) -> Result<StepVars>;

    /// Untaped convenience for a single sequence: advances `state` in place.
    fn act(&self, state: &mut Tensor2<T>, obs: &[T]) -> Result<ActionDist<T>> {
        if obs.len() != self.obs_dim() {
            return Err(Error::shape(format!("observation has {} values, policy expects {}", obs.len(), self.obs_dim())));
        }
        let mut tape = Tape::new();
        let s = tape.input(std::mem::replace(state, Tensor2::zeros(0, 0)));
        let o = tape.input(Tensor2::row_vector(obs));
        let out = self.step(&mut tape, self.params(), s, o, 1)?;
        *state = tape.value(out.state).clone();
        ActionDist::new(tape.value(out.mu).data().to_vec(), tape.value(out.sigma).data().to_vec())
    }
}

/// Either policy behind one concrete type.
#[derive(Debug, Clone)]
pub enum AnyPolicy<T: Scalar> {
    Graph(FlyGm<T>),
    Mlp(MlpPolicy<T>),
}

macro_rules! delegate {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            AnyPolicy::Graph($p) => $e,
            AnyPolicy::Mlp($p) => $e,
        }
    };
}

impl<T: Scalar> Policy<T> for AnyPolicy<T> {
    fn params(&self) -> &ParamStore<T> {
        delegate!(self, p => p.params())
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        delegate!(self, p => p.params_mut())
    }

    fn obs_dim(&self) -> usize {
        delegate!(self, p => p.obs_dim())
    }

    fn action_dim(&self) -> usize {
        delegate!(self, p => p.action_dim())
    }

    fn kind(&self) -> &'static str {
        delegate!(self, p => p.kind())
    }

    fn initial_state(&self, batch: usize) -> Tensor2<T> {
        delegate!(self, p => p.initial_state(batch))
    }

    fn step(&self, tape: &mut Tape<T>, params: &ParamStore<T>, state: Var, obs: Var, batch: usize) -> Result<StepVars> {
        delegate!(self, p => p.step(tape, params, state, obs, batch))
    }
}

/// Mean and softplus standard-deviation heads shared by both policies.
pub(crate) fn gaussian_heads<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ParamStore<T>,
    mean: &crate::numeric::Linear,
    std: &crate::numeric::Linear,
    hidden: Var,
) -> Result<(Var, Var)> {
    use crate::numeric::Activation;
    let mu = mean.forward(tape, params, hidden)?;
    let raw = std.forward(tape, params, hidden)?;
    let sp = tape.activation(Activation::Softplus, raw)?;
    let sigma = tape.add_scalar(sp, T::of(SIGMA_FLOOR))?;
    Ok((mu, sigma))
}

pub(crate) fn ensure_stage<T: Scalar>(tape: &Tape<T>, v: Var, stage: &str) -> Result<()> {
    tape.value(v).ensure_finite(stage)
}

#[cfg(test)]
mod tests {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn standard_normal_values() {
        let (lp, ent) = log_prob_and_entropy(&[0.0f64], &[1.0], &[0.0]).unwrap();
        assert!((lp + 0.918_938_533_204_672_7).abs() < 1e-12);
        assert!((ent - 1.418_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn doubling_sigma_adds_log2_per_dim() {
        let (_, e1) = log_prob_and_entropy(&[0.0f64, 1.0], &[0.3, 0.7], &[0.0, 0.0]).unwrap();
        let (_, e2) = log_prob_and_entropy(&[0.0f64, 1.0], &[0.6, 1.4], &[0.0, 0.0]).unwrap();
        assert!((e2 - e1 - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_prob_matches_density_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mu: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sigma: Vec<f64> = (0..5).map(|_| rng.random_range(0.2..2.0)).collect();
        let a: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (lp, _) = log_prob_and_entropy(&mu, &sigma, &a).unwrap();
        let density: f64 = (0..5)
            .map(|i| {
                let z = (a[i] - mu[i]) / sigma[i];
                (-0.5 * z * z).exp() / (sigma[i] * (2.0 * std::f64::consts::PI).sqrt())
            })
            .product();
        assert!((lp - density.ln()).abs() < 1e-9);
    }

    #[test]
    fn non_positive_sigma_rejected() {
        assert!(log_prob_and_entropy(&[0.0f64], &[0.0], &[0.0]).is_err());
        assert!(ActionDist::new(vec![0.0f64], vec![-1.0]).is_err());
    }
}
