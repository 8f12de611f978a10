use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ensure_stage, gaussian_heads, Policy, StepVars};
use crate::connectome::{Partition, SignedOperator};
use crate::error::{Error, Result};
use crate::numeric::{uniform, Activation, Linear, ParamId, ParamStore, Tape, Tensor2, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct FlyGmConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Per-neuron state channels `C`.
    pub channels: usize,
    /// Intrinsic descriptor width `D`.
    pub eta_dim: usize,
    pub enc_dim: usize,
    pub update_hidden: usize,
    pub decoder_hidden: usize,
    /// Message-passing iterations per control step.
    pub iterations: usize,
    /// Separate update MLP per iteration instead of one shared.
    pub per_iteration_update: bool,
    /// Zero the state before every step instead of carrying it.
    pub reset_state_each_step: bool,
    /// Optional squashing applied to the update MLP output. `None` keeps the
    /// output linear.
    pub state_activation: Option<Activation>,
}

impl FlyGmConfig {
    pub fn new(obs_dim: usize, action_dim: usize) -> Self {
        FlyGmConfig {
            obs_dim,
            action_dim,
            channels: 32,
            eta_dim: 32,
            enc_dim: 32,
            update_hidden: 64,
            decoder_hidden: 128,
            iterations: 4,
            per_iteration_update: false,
            reset_state_each_step: false,
            state_activation: None,
        }
    }
}

/// Graph policy whose hidden state lives on the neurons of a connectome.
#[derive(Debug, Clone)]
pub struct FlyGm<T> {
    cfg: FlyGmConfig,
    op: Arc<SignedOperator<T>>,
    afferent: Vec<usize>,
    efferent: Vec<usize>,
    params: ParamStore<T>,
    enc: Linear,
    gate: Linear,
    eta: ParamId,
    update: Vec<(Linear, Linear)>,
    dec1: Linear,
    dec2: Linear,
    mean_head: Linear,
    std_head: Linear,
}

fn batched_rows(rows: &[usize], batch: usize) -> Arc<[usize]> {
    rows.iter().flat_map(|&r| (0..batch).map(move |b| r * batch + b)).collect()
}

impl<T: Scalar> FlyGm<T> {
    pub fn new(cfg: FlyGmConfig, op: SignedOperator<T>, partition: &Partition, seed: u64) -> Result<Self> {
        let n = op.dim();
        let (na, ni, ne) = partition.sizes();
        if na + ni + ne != n {
            return Err(Error::shape(format!("partition covers {} neurons, operator has {n}", na + ni + ne)));
        }
        if na == 0 || ne == 0 {
            return Err(Error::invalid("the graph policy needs at least one afferent and one efferent neuron"));
        }
        if cfg.iterations == 0 {
            return Err(Error::invalid("iterations must be >= 1"));
        }
        if [cfg.obs_dim, cfg.action_dim, cfg.channels, cfg.enc_dim, cfg.update_hidden, cfg.decoder_hidden].contains(&0) {
            return Err(Error::invalid("policy dimensions must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let c = cfg.channels;
        let enc = p.add_linear("enc", cfg.obs_dim, cfg.enc_dim, &mut rng)?;
        let gate = p.add_linear("gate", c + cfg.enc_dim, c, &mut rng)?;
        let eta_bound = 1.0 / (cfg.eta_dim.max(1) as f64).sqrt();
        let eta = p.add("eta", uniform(n, cfg.eta_dim, eta_bound, &mut rng))?;
        let blocks = if cfg.per_iteration_update { cfg.iterations } else { 1 };
        let mut update = Vec::with_capacity(blocks);
        for k in 0..blocks {
            let prefix = if cfg.per_iteration_update {
                format!("update{k}")
            } else {
                "update".to_string()
            };
            let fc1 = p.add_linear(&format!("{prefix}.fc1"), c + cfg.eta_dim, cfg.update_hidden, &mut rng)?;
            let fc2 = p.add_linear(&format!("{prefix}.fc2"), cfg.update_hidden, c, &mut rng)?;
            update.push((fc1, fc2));
        }
        let dec1 = p.add_linear("dec.fc1", ne * c, cfg.decoder_hidden, &mut rng)?;
        let dec2 = p.add_linear("dec.fc2", cfg.decoder_hidden, cfg.decoder_hidden, &mut rng)?;
        let mean_head = p.add_linear("mean_head", cfg.decoder_hidden, cfg.action_dim, &mut rng)?;
        let std_head = p.add_linear("std_head", cfg.decoder_hidden, cfg.action_dim, &mut rng)?;
        Ok(FlyGm {
            cfg,
            op: Arc::new(op),
            afferent: partition.afferent.clone(),
            efferent: partition.efferent.clone(),
            params: p,
            enc,
            gate,
            eta,
            update,
            dec1,
            dec2,
            mean_head,
            std_head,
        })
    }

    pub fn config(&self) -> &FlyGmConfig {
        &self.cfg
    }

    pub fn operator(&self) -> &Arc<SignedOperator<T>> {
        &self.op
    }

    pub fn num_neurons(&self) -> usize {
        self.op.dim()
    }

    pub fn afferent(&self) -> &[usize] {
        &self.afferent
    }

    pub fn efferent(&self) -> &[usize] {
        &self.efferent
    }

    /// `x̃ = relu(enc(x))`, `batch x enc_dim`.
    pub fn encode(&self, tape: &mut Tape<T>, p: &ParamStore<T>, obs: Var) -> Result<Var> {
        let e = self.enc.forward(tape, p, obs)?;
        tape.activation(Activation::Relu, e)
    }

    /// Gated write of the encoded observation into the afferent rows.
    pub fn inject(&self, tape: &mut Tape<T>, p: &ParamStore<T>, h: Var, x_enc: Var, batch: usize) -> Result<Var> {
        let idx = batched_rows(&self.afferent, batch);
        let ha = tape.gather_rows(h, &idx)?;
        let xb = tape.tile_rows(x_enc, self.afferent.len())?;
        let z = tape.concat_cols(ha, xb)?;
        let g = self.gate.forward(tape, p, z)?;
        let g = tape.activation(Activation::Tanh, g)?;
        let out = tape.scatter_rows(h, &idx, g)?;
        ensure_stage(tape, out, "inject")?;
        Ok(out)
    }

    /// One round of `M = W·H` followed by the per-neuron update.
    pub fn propagate_once(&self, tape: &mut Tape<T>, p: &ParamStore<T>, h: Var, batch: usize, iteration: usize) -> Result<Var> {
        let (fc1, fc2) = &self.update[iteration.min(self.update.len() - 1)];
        let m = tape.spmm(&self.op, h, batch)?;
        let eta = tape.param(p, self.eta);
        let eta = tape.repeat_rows(eta, batch)?;
        let z = tape.concat_cols(m, eta)?;
        let u = fc1.forward(tape, p, z)?;
        let u = tape.activation(Activation::Relu, u)?;
        let mut out = fc2.forward(tape, p, u)?;
        if let Some(act) = self.cfg.state_activation {
            out = tape.activation(act, out)?;
        }
        ensure_stage(tape, out, "propagate")?;
        Ok(out)
    }

    pub fn propagate(&self, tape: &mut Tape<T>, p: &ParamStore<T>, mut h: Var, batch: usize) -> Result<Var> {
        for k in 0..self.cfg.iterations {
            h = self.propagate_once(tape, p, h, batch, k)?;
        }
        Ok(h)
    }

    /// Flattened efferent block (neuron-id order) to the Gaussian heads.
    pub fn decode(&self, tape: &mut Tape<T>, p: &ParamStore<T>, h: Var, batch: usize) -> Result<(Var, Var)> {
        let idx = batched_rows(&self.efferent, batch);
        let he = tape.gather_rows(h, &idx)?;
        let flat = tape.group_to_batch(he, self.efferent.len(), batch)?;
        let d = self.dec1.forward(tape, p, flat)?;
        let d = tape.activation(Activation::Relu, d)?;
        let d = self.dec2.forward(tape, p, d)?;
        let d = tape.activation(Activation::Relu, d)?;
        let (mu, sigma) = gaussian_heads(tape, p, &self.mean_head, &self.std_head, d)?;
        ensure_stage(tape, mu, "decode")?;
        ensure_stage(tape, sigma, "decode")?;
        Ok((mu, sigma))
    }
}

impl<T: Scalar> Policy<T> for FlyGm<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn obs_dim(&self) -> usize {
        self.cfg.obs_dim
    }

    fn action_dim(&self) -> usize {
        self.cfg.action_dim
    }

    fn kind(&self) -> &'static str {
        "flygm"
    }

    fn initial_state(&self, batch: usize) -> Tensor2<T> {
        Tensor2::zeros(self.op.dim() * batch, self.cfg.channels)
    }

    fn step(&self, tape: &mut Tape<T>, p: &ParamStore<T>, state: Var, obs: Var, batch: usize) -> Result<StepVars> {
        let expected = (self.op.dim() * batch, self.cfg.channels);
        let h = if self.cfg.reset_state_each_step {
            tape.input(Tensor2::zeros(expected.0, expected.1))
        } else {
            if tape.try_value(state)?.shape() != expected {
                return Err(Error::shape(format!("state is {:?}, expected {expected:?}", tape.value(state).shape())));
            }
            state
        };
        if tape.try_value(obs)?.shape() != (batch, self.cfg.obs_dim) {
            return Err(Error::shape(format!(
                "observation batch is {:?}, expected ({batch}, {})",
                tape.value(obs).shape(),
                self.cfg.obs_dim
            )));
        }
        let x = self.encode(tape, p, obs)?;
        let h = self.inject(tape, p, h, x, batch)?;
        let h = self.propagate(tape, p, h, batch)?;
        let (mu, sigma) = self.decode(tape, p, h, batch)?;
        Ok(StepVars { mu, sigma, state: h })
    }
}
