//! Imitation from expert distributions and PPO fine-tuning.

mod il;
mod optim;
mod ppo;
mod value;

use crate::error::{Error, Result};
use crate::policy::ActionDist;
use crate::scalar::Scalar;

pub use il::{train_il, write_il_csv, IlConfig, IlEpoch};
pub use optim::{AdamW, AdamWConfig, StepInfo};
pub use ppo::{collect_rollouts, train_rl, write_rl_csv, PpoConfig, RlIteration, Rollout, Worker};
pub use value::ValueNet;

fn check_sigmas<T: Scalar>(d: &ActionDist<T>) -> Result<()> {
    if d.sigma.iter().any(|&s| !(s > T::zero())) {
        return Err(Error::invalid("sigma must be strictly positive"));
    }
    Ok(())
}

/// `KL(N(μ_t, σ_t²) ‖ N(μ_s, σ_s²))` summed over independent dimensions.
pub fn kl_diag_gaussian<T: Scalar>(student: &ActionDist<T>, expert: &ActionDist<T>) -> Result<T> {
    check_sigmas(student)?;
    check_sigmas(expert)?;
    if student.dim() != expert.dim() {
        return Err(Error::shape("KL: dimension mismatch"));
    }
    let half = T::of(0.5);
    Ok((0..student.dim())
        .map(|i| {
            let (mt, st, ms, ss) = (student.mu[i], student.sigma[i], expert.mu[i], expert.sigma[i]);
            (ss / st).ln() + (st * st + (mt - ms) * (mt - ms)) / (T::of(2.0) * ss * ss) - half
        })
        .sum())
}

/// `KL + λ(‖μ_s − μ_t‖² + α‖log σ_s − log σ_t‖²)` for a single step.
pub fn imitation_loss<T: Scalar>(student: &ActionDist<T>, expert: &ActionDist<T>, lambda: T, alpha: T) -> Result<T> {
    let kl = kl_diag_gaussian(student, expert)?;
    let (mut dm, mut ds) = (T::zero(), T::zero());
    for i in 0..student.dim() {
        dm = dm + (expert.mu[i] - student.mu[i]).powi(2);
        ds = ds + (expert.sigma[i].ln() - student.sigma[i].ln()).powi(2);
    }
    Ok(kl + lambda * (dm + alpha * ds))
}

/// `λ0 · max(0, 1 − t / (frac · epochs))`.
pub fn lambda_schedule(t: f64, lambda0: f64, end_frac: f64, epochs: usize) -> f64 {
    let end = end_frac * epochs as f64;
    if end <= 0.0 {
        return 0.0;
    }
    lambda0 * (1.0 - t / end).max(0.0)
}

/// Generalized advantage estimates and returns. `values` carries the
/// bootstrap value as its last element.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(Error::shape(format!("gae: {} rewards, {} values, {} dones", n, values.len(), dones.len())));
    }
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * values[t + 1] - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Shifts and scales to mean 0, standard deviation 1 (population).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(mu: f64, sigma: f64) -> ActionDist<f64> {
        ActionDist::new(vec![mu], vec![sigma]).unwrap()
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_diag_gaussian(&d(0.3, 0.7), &d(0.3, 0.7)).unwrap(), 0.0);
        assert!((kl_diag_gaussian(&d(1.0, 1.0), &d(0.0, 1.0)).unwrap() - 0.5).abs() < 1e-12);
        let v = kl_diag_gaussian(&d(0.0, 1.0), &d(0.0, 2.0)).unwrap();
        assert!((v - (2f64.ln() + 0.125 - 0.5)).abs() < 1e-12);
        assert!(kl_diag_gaussian(
            &d(0.0, 1.0),
            &ActionDist {
                mu: vec![0.0],
                sigma: vec![0.0]
            }
        )
        .is_err());
    }

    #[test]
    fn imitation_loss_by_hand() {
        assert_eq!(imitation_loss(&d(0.2, 0.5), &d(0.2, 0.5), 0.7, 0.1).unwrap(), 0.0);
        assert!((imitation_loss(&d(1.0, 1.0), &d(0.0, 1.0), 1.0, 0.1).unwrap() - 1.5).abs() < 1e-12);
        let (s, e) = (d(0.4, 0.3), d(-0.1, 0.9));
        assert_eq!(imitation_loss(&s, &e, 0.0, 0.1).unwrap(), kl_diag_gaussian(&s, &e).unwrap());
    }

    #[test]
    fn lambda_schedule_points() {
        assert_eq!(lambda_schedule(0.0, 1.0, 0.8, 100), 1.0);
        assert_eq!(lambda_schedule(80.0, 1.0, 0.8, 100), 0.0);
        assert!((lambda_schedule(40.0, 1.0, 0.8, 100) - 0.5).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for t in 0..120 {
            let l = lambda_schedule(t as f64, 2.0, 0.5, 100);
            assert!(l <= prev && l >= 0.0);
            prev = l;
        }
    }

    #[test]
    fn gae_fixture_and_limits() {
        let (adv, ret) = gae(&[1.0, 1.0, 1.0], &[0.0; 4], &[false; 3], 0.5, 0.5).unwrap();
        let brute: Vec<f64> = (0..3).map(|t| (t..3).map(|k| 0.25f64.powi(k - t)).sum()).collect();
        assert_eq!(adv, brute);
        assert_eq!(adv, vec![1.3125, 1.25, 1.0]);
        assert_eq!(ret, adv);
        let r = [0.5, -1.0, 2.0];
        let v = [0.1, 0.2, -0.3, 0.4];
        let (a0, _) = gae(&r, &v, &[false; 3], 0.0, 0.9).unwrap();
        for t in 0..3 {
            assert_eq!(a0[t], r[t] - v[t]);
        }
        let (al, _) = gae(&r, &v, &[false, true, false], 0.9, 0.0).unwrap();
        assert_eq!(al[1], r[1] - v[1]);
        assert_eq!(al[0], r[0] + 0.9 * v[1] - v[0]);
        assert!(gae(&r, &v[..3], &[false; 3], 0.9, 0.9).is_err());
    }

    #[test]
    fn normalization_is_shift_invariant() {
        let mut a = vec![0.3, -1.2, 2.5, 0.0];
        let mut b: Vec<f64> = a.iter().map(|x| x + 17.0).collect();
        normalize_advantages(&mut a);
        normalize_advantages(&mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(a.iter().sum::<f64>().abs() < 1e-12);
    }
}
