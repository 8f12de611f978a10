use std::io::Write;

use super::{Command, EnvDescriptor, Expert, PointFly};
use crate::error::Result;
use crate::numeric::Tensor2;
use crate::policy::{Policy, RunningNorm};
use crate::scalar::Scalar;

/// Anything that maps observations to actions over an episode.
pub trait Controller {
    fn reset(&mut self);
    fn act(&mut self, obs: &[f64]) -> Result<Vec<f64>>;
    /// Called after every environment step; test oracles may edit the state.
    fn after_step(&mut self, _env: &mut PointFly) {}
}

/// Deterministic expert (mean action).
pub struct ExpertController(pub Expert);

impl Controller for ExpertController {
    fn reset(&mut self) {}

    fn act(&mut self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.mean(obs))
    }
}

/// Emits zero actions.
pub struct ZeroController(pub usize);

impl Controller for ZeroController {
    fn reset(&mut self) {}

    fn act(&mut self, _obs: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.0])
    }
}

/// Zero actions, then snaps the body onto the reference after every step.
pub struct TeleportOracle(pub usize);

impl Controller for TeleportOracle {
    fn reset(&mut self) {}

    fn act(&mut self, _obs: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.0])
    }

    fn after_step(&mut self, env: &mut PointFly) {
        env.teleport_to_reference();
    }
}

/// Runs a trained policy deterministically (actions = μ) on normalized
/// observations, carrying its recurrent state through the episode.
pub struct PolicyController<'a, T: Scalar, P: Policy<T>> {
    policy: &'a P,
    norm: RunningNorm,
    state: Tensor2<T>,
}

impl<'a, T: Scalar, P: Policy<T>> PolicyController<'a, T, P> {
    pub fn new(policy: &'a P, norm: &RunningNorm) -> Self {
        PolicyController {
            policy,
            norm: norm.snapshot(),
            state: policy.initial_state(1),
        }
    }
}

impl<T: Scalar, P: Policy<T>> Controller for PolicyController<'_, T, P> {
    fn reset(&mut self) {
        self.state = self.policy.initial_state(1);
    }

    fn act(&mut self, obs: &[f64]) -> Result<Vec<f64>> {
        let x: Vec<T> = self.norm.apply(obs)?.into_iter().map(T::of).collect();
        let d = self.policy.act(&mut self.state, &x)?;
        Ok(d.mu.iter().map(|v| v.as_f64()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub command: Command,
    pub pos_err_mean: f64,
    pub pos_err_std: f64,
    pub angle_err_mean: f64,
    pub angle_err_std: f64,
    pub mean_return: f64,
    pub mean_len: f64,
    pub episodes: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-episode errors are step averages; the cell reports their mean and
/// sample standard deviation across episodes.
pub fn evaluate_cell(ctrl: &mut dyn Controller, desc: &EnvDescriptor, episodes: usize, seed: u64) -> Result<CellMetrics> {
    let mut env = PointFly::new(desc.clone())?;
    let (mut pos, mut ang, mut ret, mut lens) = (vec![], vec![], vec![], vec![]);
    for ep in 0..episodes.max(1) {
        ctrl.reset();
        let mut obs = env.reset(seed.wrapping_add(ep as u64));
        let (mut p, mut a, mut r, mut n) = (0.0, 0.0, 0.0, 0usize);
        loop {
            let action = ctrl.act(&obs)?;
            let out = env.step(&action)?;
            ctrl.after_step(&mut env);
            p += env.position_deviation();
            a += env.heading_deviation();
            r += out.reward;
            n += 1;
            obs = if out.done { break } else { env.observe() };
        }
        pos.push(p / n as f64);
        ang.push(a / n as f64);
        ret.push(r);
        lens.push(n as f64);
    }
    let (pos_err_mean, pos_err_std) = mean_std(&pos);
    let (angle_err_mean, angle_err_std) = mean_std(&ang);
    Ok(CellMetrics {
        command: desc.command,
        pos_err_mean,
        pos_err_std,
        angle_err_mean,
        angle_err_std,
        mean_return: mean_std(&ret).0,
        mean_len: mean_std(&lens).0,
        episodes: pos.len(),
    })
}

pub fn evaluate(ctrl: &mut dyn Controller, base: &EnvDescriptor, commands: &[Command], episodes: usize, seed: u64) -> Result<Vec<CellMetrics>> {
    commands
        .iter()
        .enumerate()
        .map(|(i, &c)| evaluate_cell(ctrl, &base.with_command(c), episodes, seed.wrapping_add(1000 * i as u64)))
        .collect()
}

/// Table-shaped CSV: cell, pos_err_mean, pos_err_std, angle_err_mean, angle_err_std.
pub fn write_eval_csv(metrics: &[CellMetrics], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cell", "pos_err_mean", "pos_err_std", "angle_err_mean", "angle_err_std"])?;
    for m in metrics {
        w.write_record([
            m.command.label(),
            m.pos_err_mean.to_string(),
            m.pos_err_std.to_string(),
            m.angle_err_mean.to_string(),
            m.angle_err_std.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
