use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::optim::{AdamW, AdamWConfig};
use super::value::ValueNet;
use super::{gae, normalize_advantages};
use crate::env::{EnvDescriptor, PointFly};
use crate::error::{Error, Result};
use crate::numeric::{SurrogateBatch, Tape, Tensor2, Var};
use crate::policy::{Policy, RunningNorm};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs_per_batch: usize,
    /// Sequence chunks per minibatch.
    pub minibatch_size: usize,
    /// Steps per environment per iteration; a multiple of `chunk_len`.
    pub rollout_horizon: usize,
    /// Recurrent replay length.
    pub chunk_len: usize,
    pub n_envs: usize,
    pub lr: f64,
    pub value_lr: f64,
    pub grad_clip_norm: f64,
    pub total_steps: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_eps: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            gamma: 0.99,
            gae_lambda: 0.95,
            epochs_per_batch: 4,
            minibatch_size: 8,
            rollout_horizon: 256,
            chunk_len: 16,
            n_envs: 4,
            lr: 3e-4,
            value_lr: 1e-3,
            grad_clip_norm: 1.0,
            total_steps: 500_000,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::invalid("clip_eps must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::invalid("gamma and gae_lambda must lie in [0, 1]"));
        }
        if self.n_envs == 0 || self.chunk_len == 0 || self.minibatch_size == 0 || self.epochs_per_batch == 0 {
            return Err(Error::invalid("n_envs, chunk_len, minibatch_size and epochs_per_batch must be positive"));
        }
        if self.rollout_horizon == 0 || !self.rollout_horizon.is_multiple_of(self.chunk_len) {
            return Err(Error::invalid("rollout_horizon must be a positive multiple of chunk_len"));
        }
        if !(self.lr > 0.0) || !(self.value_lr > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        Ok(())
    }

    pub fn steps_per_iteration(&self) -> usize {
        self.n_envs * self.rollout_horizon
    }
}

/// One environment with its own random stream and recurrent state. Episodes
/// continue across iterations.
#[derive(Debug, Clone)]
pub struct Worker<T> {
    env: PointFly,
    rng: ChaCha8Rng,
    state: Tensor2<T>,
    obs: Vec<f64>,
    ep_return: f64,
    fresh: bool,
}

impl<T: Scalar> Worker<T> {
    /// Worker `index` draws from stream `index` of the generator seeded by `seed`.
    pub fn new<P: Policy<T>>(desc: &EnvDescriptor, policy: &P, seed: u64, index: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let mut env = PointFly::new(desc.clone())?;
        let obs = env.reset(rng.next_u64());
        Ok(Worker {
            env,
            rng,
            state: policy.initial_state(1),
            obs,
            ep_return: 0.0,
            fresh: true,
        })
    }

    fn restart<P: Policy<T>>(&mut self, policy: &P) {
        self.obs = self.env.reset(self.rng.next_u64());
        self.state = policy.initial_state(1);
        self.ep_return = 0.0;
        self.fresh = true;
    }

    /// Runs `horizon` steps with sampled actions.
    pub fn collect<P: Policy<T>>(&mut self, policy: &P, value: &ValueNet<T>, norm: &RunningNorm, horizon: usize, chunk_len: usize) -> Result<Rollout<T>> {
        let (d, a) = (policy.obs_dim(), policy.action_dim());
        let mut r = Rollout {
            obs: Vec::with_capacity(horizon * d),
            actions: Vec::with_capacity(horizon * a),
            log_probs: Vec::with_capacity(horizon),
            rewards: Vec::with_capacity(horizon),
            dones: Vec::with_capacity(horizon),
            values: Vec::with_capacity(horizon + 1),
            resets: Vec::with_capacity(horizon),
            chunk_states: Vec::with_capacity(horizon / chunk_len + 1),
            episode_returns: Vec::new(),
            dropped: 0,
        };
        for t in 0..horizon {
            if t % chunk_len == 0 {
                r.chunk_states.push(self.state.clone());
            }
            r.resets.push(self.fresh);
            self.fresh = false;
            let x: Vec<T> = norm.apply(&self.obs)?.into_iter().map(T::of).collect();
            r.values.push(value.values(Tensor2::row_vector(&x))?[0].as_f64());
            let dist = policy.act(&mut self.state, &x)?;
            let action = dist.sample(&mut self.rng);
            let (logp, _) = dist.log_prob_and_entropy(&action)?;
            r.obs.extend_from_slice(&x);
            r.actions.extend_from_slice(&action);
            r.log_probs.push(logp);
            let a64: Vec<f64> = action.iter().map(|v| v.as_f64()).collect();
            match self.env.step(&a64) {
                Ok(out) => {
                    r.rewards.push(out.reward);
                    r.dones.push(out.done);
                    self.ep_return += out.reward;
                    self.obs = out.obs;
                    if out.done {
                        r.episode_returns.push(self.ep_return);
                        self.restart(policy);
                    }
                }
                Err(e) => {
                    warn!("dropping episode after environment fault: {e}");
                    r.rewards.push(0.0);
                    r.dones.push(true);
                    r.dropped += 1;
                    self.restart(policy);
                }
            }
        }
        let x: Vec<T> = norm.apply(&self.obs)?.into_iter().map(T::of).collect();
        r.values.push(value.values(Tensor2::row_vector(&x))?[0].as_f64());
        Ok(r)
    }
}

/// Trajectory segment from one worker.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<T> {
    /// Normalized observations, `horizon x obs_dim` row-major.
    pub obs: Vec<T>,
    pub actions: Vec<T>,
    pub log_probs: Vec<T>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// One value per step plus the bootstrap value.
    pub values: Vec<f64>,
    /// Whether the recurrent state was reset right before each step.
    pub resets: Vec<bool>,
    /// Recurrent state at the start of each replay chunk.
    pub chunk_states: Vec<Tensor2<T>>,
    pub episode_returns: Vec<f64>,
    pub dropped: usize,
}

/// Collects one segment per worker in parallel. Each worker only reads the
/// shared policy, value net and normalizer.
pub fn collect_rollouts<T: Scalar, P: Policy<T>>(
    workers: &mut [Worker<T>],
    policy: &P,
    value: &ValueNet<T>,
    norm: &RunningNorm,
    horizon: usize,
    chunk_len: usize,
) -> Result<Vec<Rollout<T>>> {
    let norm = norm.snapshot();
    workers.par_iter_mut().map(|w| w.collect(policy, value, &norm, horizon, chunk_len)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlIteration {
    pub iteration: usize,
    pub env_steps: usize,
    /// Mean over episodes finished during this iteration (NaN if none).
    pub mean_return: f64,
    pub episodes: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub entropy: f64,
    pub skipped: usize,
}

struct Flat<T> {
    obs: Vec<T>,
    actions: Vec<T>,
    log_probs: Vec<T>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
}

/// Interleaves per-sequence states (`V x C` each) into the batched layout
/// where row `v·B + b` belongs to sequence `b`.
fn stack_states<T: Scalar>(states: &[&Tensor2<T>]) -> Tensor2<T> {
    let b = states.len();
    let (v, c) = states[0].shape();
    let mut out = Tensor2::zeros(v * b, c);
    for (j, s) in states.iter().enumerate() {
        for r in 0..v {
            out.row_mut(r * b + j).copy_from_slice(s.row(r));
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn replay_minibatch<T: Scalar, P: Policy<T>>(
    policy: &mut P,
    value: &mut ValueNet<T>,
    rollouts: &[Rollout<T>],
    flats: &[Flat<T>],
    units: &[(usize, usize)],
    cfg: &PpoConfig,
    opt_pi: &mut AdamW<T>,
    opt_v: &mut AdamW<T>,
    acc: &mut RlIteration,
) -> Result<()> {
    let (d, a) = (policy.obs_dim(), policy.action_dim());
    let b = units.len();
    let l = cfg.chunk_len;

    let mut tape = Tape::new();
    let states: Vec<&Tensor2<T>> = units.iter().map(|&(w, c)| &rollouts[w].chunk_states[c]).collect();
    let stacked = stack_states(&states);
    let (vrows, cols) = (stacked.rows() / b.max(1), stacked.cols());
    let mut h = tape.input(stacked);
    let mut loss: Option<Var> = None;
    for k in 0..l {
        let ts: Vec<usize> = units.iter().map(|&(_, c)| c * l + k).collect();
        if k > 0 && cols > 0 && units.iter().zip(&ts).any(|(&(w, _), &t)| rollouts[w].resets[t]) {
            let mut keep = Tensor2::filled(vrows * b, cols, T::one());
            for (j, (&(w, _), &t)) in units.iter().zip(&ts).enumerate() {
                if rollouts[w].resets[t] {
                    for r in 0..vrows {
                        keep.row_mut(r * b + j).fill(T::zero());
                    }
                }
            }
            let kv = tape.input(keep);
            h = tape.mul(h, kv)?;
        }
        let mut obs = Tensor2::zeros(b, d);
        let mut actions = Tensor2::zeros(b, a);
        let mut old = Vec::with_capacity(b);
        let mut adv = Vec::with_capacity(b);
        for (j, (&(w, _), &t)) in units.iter().zip(&ts).enumerate() {
            let f = &flats[w];
            obs.row_mut(j).copy_from_slice(&f.obs[t * d..(t + 1) * d]);
            actions.row_mut(j).copy_from_slice(&f.actions[t * a..(t + 1) * a]);
            old.push(f.log_probs[t]);
            adv.push(T::of(f.advantages[t]));
        }
        let ov = tape.input(obs);
        let out = policy.step(&mut tape, policy.params(), h, ov, b)?;
        h = out.state;
        let batch = SurrogateBatch {
            actions,
            old_log_probs: old,
            advantages: adv,
            mask: vec![T::one(); b],
        };
        let (lt, stats) = tape.clipped_surrogate(out.mu, out.sigma, batch, T::of(cfg.clip_eps), T::of(cfg.entropy_coef))?;
        acc.policy_loss += tape.value(lt).item().as_f64() / l as f64;
        acc.clip_fraction += stats.clip_fraction / l as f64;
        acc.approx_kl += stats.approx_kl / l as f64;
        acc.entropy += stats.entropy / l as f64;
        acc.skipped += stats.skipped;
        let w = tape.scale(lt, T::of(1.0 / l as f64))?;
        loss = Some(match loss {
            Some(x) => tape.add(x, w)?,
            None => w,
        });
    }
    if let Some(loss) = loss {
        let grads = tape.backward_scalar(loss)?;
        opt_pi.apply(policy.params_mut(), &grads)?;
    }

    let mut vtape = Tape::new();
    let mut obs = Tensor2::zeros(b * l, d);
    let mut target = Tensor2::zeros(b * l, 1);
    for (j, &(w, c)) in units.iter().enumerate() {
        for k in 0..l {
            let t = c * l + k;
            obs.row_mut(j * l + k).copy_from_slice(&flats[w].obs[t * d..(t + 1) * d]);
            target.set(j * l + k, 0, T::of(flats[w].returns[t]));
        }
    }
    let ov = vtape.input(obs);
    let pred = value.forward(&mut vtape, value.params(), ov)?;
    let mse = vtape.mse(pred, target, None)?;
    let mv = vtape.value(mse).item().as_f64();
    if !mv.is_finite() {
        return Err(Error::NonFinite("value loss".into()));
    }
    acc.value_loss += mv;
    let scaled = vtape.scale(mse, T::of(cfg.value_coef))?;
    let grads = vtape.backward_scalar(scaled)?;
    opt_v.apply(value.params_mut(), &grads)?;
    Ok(())
}

/// PPO fine-tuning on one environment configuration. The normalizer is used
/// as given and never updated. With `total_steps == 0` nothing changes.
pub fn train_rl<T, P, F>(
    policy: &mut P,
    value: &mut ValueNet<T>,
    norm: &RunningNorm,
    desc: &EnvDescriptor,
    cfg: &PpoConfig,
    mut on_iter: F,
) -> Result<Vec<RlIteration>>
where
    T: Scalar,
    P: Policy<T>,
    F: FnMut(&RlIteration, &P) -> Result<()>,
{
    cfg.validate()?;
    if desc.obs_dim() != policy.obs_dim() || desc.act_dim() != policy.action_dim() || norm.dim() != policy.obs_dim() {
        return Err(Error::shape("environment, normalizer and policy dimensions disagree"));
    }
    let iterations = cfg.total_steps.div_ceil(cfg.steps_per_iteration());
    let mut curve = Vec::with_capacity(iterations);
    if iterations == 0 {
        return Ok(curve);
    }
    let norm = norm.snapshot();
    let mut opt_pi = AdamW::new(
        policy.params(),
        AdamWConfig {
            lr: cfg.lr,
            clip_norm: cfg.grad_clip_norm,
            ..AdamWConfig::default()
        },
    );
    let mut opt_v = AdamW::new(
        value.params(),
        AdamWConfig {
            lr: cfg.value_lr,
            clip_norm: cfg.grad_clip_norm,
            ..AdamWConfig::default()
        },
    );
    let mut workers: Vec<Worker<T>> = (0..cfg.n_envs).map(|i| Worker::new(desc, &*policy, cfg.seed, i)).collect::<Result<_>>()?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let n_chunks = cfg.rollout_horizon / cfg.chunk_len;

    for it in 0..iterations {
        let rollouts = collect_rollouts(&mut workers, &*policy, value, &norm, cfg.rollout_horizon, cfg.chunk_len)?;
        let mut flats = Vec::with_capacity(rollouts.len());
        let mut all_adv = Vec::with_capacity(cfg.steps_per_iteration());
        for r in &rollouts {
            let (adv, ret) = gae(&r.rewards, &r.values, &r.dones, cfg.gamma, cfg.gae_lambda)?;
            all_adv.extend_from_slice(&adv);
            flats.push(Flat {
                obs: r.obs.clone(),
                actions: r.actions.clone(),
                log_probs: r.log_probs.clone(),
                advantages: adv,
                returns: ret,
            });
        }
        normalize_advantages(&mut all_adv);
        for (i, f) in flats.iter_mut().enumerate() {
            let h = cfg.rollout_horizon;
            f.advantages.copy_from_slice(&all_adv[i * h..(i + 1) * h]);
        }

        let returns: Vec<f64> = rollouts.iter().flat_map(|r| r.episode_returns.iter().copied()).collect();
        let mut acc = RlIteration {
            iteration: it + 1,
            env_steps: (it + 1) * cfg.steps_per_iteration(),
            mean_return: if returns.is_empty() {
                f64::NAN
            } else {
                returns.iter().sum::<f64>() / returns.len() as f64
            },
            episodes: returns.len(),
            policy_loss: 0.0,
            value_loss: 0.0,
            clip_fraction: 0.0,
            approx_kl: 0.0,
            entropy: 0.0,
            skipped: 0,
        };
        let mut units: Vec<(usize, usize)> = (0..rollouts.len()).flat_map(|w| (0..n_chunks).map(move |c| (w, c))).collect();
        let mut minibatches = 0usize;
        for _ in 0..cfg.epochs_per_batch {
            units.shuffle(&mut shuffle_rng);
            for mb in units.chunks(cfg.minibatch_size) {
                replay_minibatch(policy, value, &rollouts, &flats, mb, cfg, &mut opt_pi, &mut opt_v, &mut acc)?;
                minibatches += 1;
            }
        }
        let m = minibatches.max(1) as f64;
        acc.policy_loss /= m;
        acc.value_loss /= m;
        acc.clip_fraction /= m;
        acc.approx_kl /= m;
        acc.entropy /= m;
        info!(
            "ppo iteration {}: steps {} return {:.3} ({} episodes) value_loss {:.4} kl {:.4}",
            acc.iteration, acc.env_steps, acc.mean_return, acc.episodes, acc.value_loss, acc.approx_kl
        );
        on_iter(&acc, policy)?;
        curve.push(acc);
    }
    Ok(curve)
}

pub fn write_rl_csv(curve: &[RlIteration], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "iteration",
        "env_steps",
        "mean_return",
        "episodes",
        "policy_loss",
        "value_loss",
        "clip_fraction",
        "approx_kl",
        "entropy",
    ])?;
    for r in curve {
        w.write_record([
            r.iteration.to_string(),
            r.env_steps.to_string(),
            r.mean_return.to_string(),
            r.episodes.to_string(),
            r.policy_loss.to_string(),
            r.value_loss.to_string(),
            r.clip_fraction.to_string(),
            r.approx_kl.to_string(),
            r.entropy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
