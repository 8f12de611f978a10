//! Point-mass locomotion tasks driven by a (speed, yaw-rate) command, a
//! scripted tracking expert, demonstration datasets and evaluation.

mod dataset;
mod eval;
mod expert;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use dataset::{rollout_dataset, Dataset, DatasetSummary, Episode, Transition};
pub use eval::{evaluate, evaluate_cell, write_eval_csv, CellMetrics, Controller, ExpertController, PolicyController, TeleportOracle, ZeroController};
pub use expert::{Expert, ExpertGains};

pub const WALK_OBS_DIM: usize = 18;
pub const WALK_ACT_DIM: usize = 4;
pub const FLIGHT_OBS_DIM: usize = 24;
pub const FLIGHT_ACT_DIM: usize = 6;

/// Waypoints in the observation, spaced this many control steps apart.
pub const WAYPOINTS: usize = 5;
pub const WAYPOINT_STRIDE: usize = 10;

/// Deviation beyond which an episode terminates early.
pub const MAX_DEVIATION: f64 = 10.0;

pub const REWARD_POS_WEIGHT: f64 = 1.0;
pub const REWARD_HEADING_WEIGHT: f64 = 0.5;
pub const REWARD_ACTION_WEIGHT: f64 = 0.01;

/// Commanded speeds and yaw rates of the standard evaluation grid.
pub const COMMAND_GRID: [(f64, f64); 4] = [(2.0, 0.0), (3.0, 0.0), (3.0, 4.0), (3.0, 7.0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Walk,
    Flight,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Walk => "pointfly-walk",
            EnvKind::Flight => "pointfly-flight",
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::Walk => WALK_OBS_DIM,
            EnvKind::Flight => FLIGHT_OBS_DIM,
        }
    }

    pub fn act_dim(self) -> usize {
        match self {
            EnvKind::Walk => WALK_ACT_DIM,
            EnvKind::Flight => FLIGHT_ACT_DIM,
        }
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointfly-walk" => Ok(EnvKind::Walk),
            "pointfly-flight" => Ok(EnvKind::Flight),
            other => Err(Error::invalid(format!("unknown environment {other:?}"))),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Forward speed, yaw rate and (flight only) climb rate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Command {
    pub speed: f64,
    pub yaw: f64,
    pub climb: f64,
}

impl Command {
    pub fn walk(speed: f64, yaw: f64) -> Self {
        Command { speed, yaw, climb: 0.0 }
    }

    pub fn label(&self) -> String {
        if self.climb == 0.0 {
            format!("({},{})", self.speed, self.yaw)
        } else {
            format!("({},{},{})", self.speed, self.yaw, self.climb)
        }
    }
}

/// Body constants. Mass and inertia are 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Physics {
    pub drag: f64,
    pub brake_drag: f64,
    pub yaw_drag: f64,
    pub gravity: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Physics {
            drag: 1.0,
            brake_drag: 2.0,
            yaw_drag: 1.0,
            gravity: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvDescriptor {
    pub kind: EnvKind,
    pub dt: f64,
    pub episode_len: usize,
    pub command: Command,
    /// Half-width of the uniform perturbation of the initial pose.
    pub init_noise: f64,
    pub physics: Physics,
}

impl EnvDescriptor {
    pub fn new(kind: EnvKind, command: Command) -> Self {
        EnvDescriptor {
            kind,
            dt: 0.01,
            episode_len: 500,
            command,
            init_noise: 0.01,
            physics: Physics::default(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.kind.obs_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.kind.act_dim()
    }

    pub fn with_command(&self, command: Command) -> Self {
        EnvDescriptor { command, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.episode_len == 0 {
            return Err(Error::invalid("dt must be > 0 and episode_len >= 1"));
        }
        if !(self.init_noise >= 0.0) {
            return Err(Error::invalid("init_noise must be >= 0"));
        }
        if self.kind == EnvKind::Walk && self.command.climb != 0.0 {
            return Err(Error::invalid("walk commands have no climb component"));
        }
        Ok(())
    }

    /// Reference position (x, y, z) and heading at time `t`.
    pub fn reference(&self, t: f64) -> ([f64; 3], f64) {
        let Command { speed: s, yaw: w, climb } = self.command;
        let heading = w * t;
        let (x, y) = if w.abs() < 1e-12 {
            (s * t, 0.0)
        } else {
            (s / w * heading.sin(), s / w * (1.0 - heading.cos()))
        };
        ([x, y, climb * t], heading)
    }

    pub fn reference_velocity(&self, t: f64) -> [f64; 3] {
        let h = self.command.yaw * t;
        [self.command.speed * h.cos(), self.command.speed * h.sin(), self.command.climb]
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyState {
    pub pos: [f64; 3],
    pub vel: [f64; 3],
    pub heading: f64,
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// True when the episode ended by exceeding the deviation limit.
    pub terminated: bool,
}

/// Single-owner simulation instance.
#[derive(Debug, Clone)]
pub struct PointFly {
    desc: EnvDescriptor,
    body: BodyState,
    step: usize,
    done: bool,
}

impl PointFly {
    pub fn new(desc: EnvDescriptor) -> Result<Self> {
        desc.validate()?;
        Ok(PointFly {
            desc,
            body: BodyState::default(),
            step: 0,
            done: true,
        })
    }

    pub fn descriptor(&self) -> &EnvDescriptor {
        &self.desc
    }

    pub fn set_command(&mut self, command: Command) -> Result<()> {
        let desc = self.desc.with_command(command);
        desc.validate()?;
        self.desc = desc;
        Ok(())
    }

    pub fn body(&self) -> &BodyState {
        &self.body
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.desc.dt
    }

    /// Starts an episode on the reference with matched velocity, plus a
    /// seeded pose perturbation.
    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.desc.init_noise;
        let mut jitter = || if n > 0.0 { rng.random_range(-n..=n) } else { 0.0 };
        let v = self.desc.reference_velocity(0.0);
        self.body = BodyState {
            pos: [jitter(), jitter(), 0.0],
            vel: v,
            heading: jitter(),
            yaw_rate: self.desc.command.yaw,
        };
        if self.desc.kind == EnvKind::Walk {
            self.body.vel[2] = 0.0;
        }
        self.step = 0;
        self.done = false;
        self.observe()
    }

    /// Distance to the current reference point.
    pub fn position_deviation(&self) -> f64 {
        let (r, _) = self.desc.reference(self.time());
        let d: f64 = (0..3).map(|i| (self.body.pos[i] - r[i]).powi(2)).sum();
        d.sqrt()
    }

    /// Absolute wrapped heading difference to the reference.
    pub fn heading_deviation(&self) -> f64 {
        let (_, h) = self.desc.reference(self.time());
        wrap_angle(self.body.heading - h).abs()
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::invalid("step called on a finished episode; reset first"));
        }
        if action.len() != self.desc.act_dim() {
            return Err(Error::shape(format!("action has {} values, expected {}", action.len(), self.desc.act_dim())));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("action".into()));
        }
        let ph = self.desc.physics;
        let dt = self.desc.dt;
        let b = &mut self.body;
        let (c, s) = (b.heading.cos(), b.heading.sin());
        let drag = ph.drag + ph.brake_drag * action[3].max(0.0);
        let ax = c * action[0] - s * action[1] - drag * b.vel[0];
        let ay = s * action[0] + c * action[1] - drag * b.vel[1];
        b.vel[0] += dt * ax;
        b.vel[1] += dt * ay;
        if self.desc.kind == EnvKind::Flight {
            let vdrag = ph.drag + ph.brake_drag * action[5].max(0.0);
            let az = action[4] - ph.gravity - vdrag * b.vel[2];
            b.vel[2] += dt * az;
        }
        for i in 0..3 {
            b.pos[i] += dt * b.vel[i];
        }
        b.yaw_rate += dt * (action[2] - ph.yaw_drag * b.yaw_rate);
        b.heading += dt * b.yaw_rate;
        self.step += 1;

        let pos_dev = self.position_deviation();
        let head_dev = self.heading_deviation();
        let effort: f64 = action.iter().map(|a| a * a).sum();
        let reward = -(REWARD_POS_WEIGHT * pos_dev + REWARD_HEADING_WEIGHT * head_dev + REWARD_ACTION_WEIGHT * effort);
        let terminated = pos_dev > MAX_DEVIATION;
        self.done = terminated || self.step >= self.desc.episode_len;
        Ok(StepOutcome {
            obs: self.observe(),
            reward,
            done: self.done,
            terminated,
        })
    }

    pub fn observe(&self) -> Vec<f64> {
        let t = self.time();
        let d = &self.desc;
        let b = &self.body;
        let (r, rh) = d.reference(t);
        let rv = d.reference_velocity(t);
        let (c, s) = (b.heading.cos(), b.heading.sin());
        let to_body = |x: f64, y: f64| [c * x + s * y, -s * x + c * y];

        let mut obs = Vec::with_capacity(d.obs_dim());
        obs.extend(to_body(b.vel[0] - rv[0], b.vel[1] - rv[1]));
        obs.push(b.yaw_rate - d.command.yaw);
        obs.push(wrap_angle(b.heading - rh));
        obs.extend(to_body(b.pos[0] - r[0], b.pos[1] - r[1]));
        let mut wz = Vec::with_capacity(WAYPOINTS);
        for k in 1..=WAYPOINTS {
            let (w, _) = d.reference(t + (k * WAYPOINT_STRIDE) as f64 * d.dt);
            obs.extend(to_body(w[0] - b.pos[0], w[1] - b.pos[1]));
            wz.push(w[2] - b.pos[2]);
        }
        obs.push(d.command.speed);
        obs.push(d.command.yaw);
        if d.kind == EnvKind::Flight {
            obs.push(b.pos[2] - r[2]);
            obs.push(b.vel[2] - rv[2]);
            obs.push(d.command.climb);
            obs.extend([wz[0], wz[2], wz[4]]);
        }
        debug_assert_eq!(obs.len(), d.obs_dim());
        obs
    }

    /// Test hook: moves the body by an offset without touching velocities.
    pub fn teleport_by(&mut self, dx: f64, dy: f64) {
        self.body.pos[0] += dx;
        self.body.pos[1] += dy;
    }

    /// Test hook: overwrites the body state.
    pub fn set_body(&mut self, body: BodyState) {
        self.body = body;
    }

    /// Test hook: places the body exactly on the reference trajectory.
    pub fn teleport_to_reference(&mut self) {
        let t = self.time();
        let (r, h) = self.desc.reference(t);
        self.body = BodyState {
            pos: r,
            vel: self.desc.reference_velocity(t),
            heading: h,
            yaw_rate: self.desc.command.yaw,
        };
    }
}
