use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{gaussian_heads, Policy, StepVars};
use crate::error::{Error, Result};
use crate::numeric::{Activation, Linear, ParamStore, Tape, Tensor2, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub enc_dim: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl MlpConfig {
    pub fn new(obs_dim: usize, action_dim: usize) -> Self {
        MlpConfig {
            obs_dim,
            action_dim,
            enc_dim: 32,
            hidden: 512,
            layers: 2,
        }
    }
}

/// Feed-forward baseline: the graph policy's encoder followed by dense
/// rectified layers and the same Gaussian heads. Stateless.
#[derive(Debug, Clone)]
pub struct MlpPolicy<T> {
    cfg: MlpConfig,
    params: ParamStore<T>,
    enc: Linear,
    hidden: Vec<Linear>,
    mean_head: Linear,
    std_head: Linear,
}

impl<T: Scalar> MlpPolicy<T> {
    pub fn new(cfg: MlpConfig, seed: u64) -> Result<Self> {
        if cfg.layers == 0 || [cfg.obs_dim, cfg.action_dim, cfg.enc_dim, cfg.hidden].contains(&0) {
            return Err(Error::invalid("MLP dimensions and layer count must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let enc = p.add_linear("enc", cfg.obs_dim, cfg.enc_dim, &mut rng)?;
        let mut hidden = Vec::with_capacity(cfg.layers);
        let mut width = cfg.enc_dim;
        for i in 0..cfg.layers {
            hidden.push(p.add_linear(&format!("mlp.fc{}", i + 1), width, cfg.hidden, &mut rng)?);
            width = cfg.hidden;
        }
        let mean_head = p.add_linear("mean_head", width, cfg.action_dim, &mut rng)?;
        let std_head = p.add_linear("std_head", width, cfg.action_dim, &mut rng)?;
        Ok(MlpPolicy {
            cfg,
            params: p,
            enc,
            hidden,
            mean_head,
            std_head,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.cfg
    }
}

impl<T: Scalar> Policy<T> for MlpPolicy<T> {
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
        "mlp"
    }

    fn initial_state(&self, _batch: usize) -> Tensor2<T> {
        Tensor2::zeros(0, 0)
    }

    fn step(&self, tape: &mut Tape<T>, p: &ParamStore<T>, state: Var, obs: Var, batch: usize) -> Result<StepVars> {
        if tape.try_value(obs)?.shape() != (batch, self.cfg.obs_dim) {
            return Err(Error::shape(format!(
                "observation batch is {:?}, expected ({batch}, {})",
                tape.value(obs).shape(),
                self.cfg.obs_dim
            )));
        }
        let x = self.enc.forward(tape, p, obs)?;
        let mut x = tape.activation(Activation::Relu, x)?;
        for layer in &self.hidden {
            let y = layer.forward(tape, p, x)?;
            x = tape.activation(Activation::Relu, y)?;
        }
        let (mu, sigma) = gaussian_heads(tape, p, &self.mean_head, &self.std_head, x)?;
        Ok(StepVars { mu, sigma, state })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::softplus_floor;

    #[test]
    fn parameter_count_with_512_hidden() {
        let cfg = MlpConfig::new(18, 4);
        let pol = MlpPolicy::<f32>::new(cfg, 0).unwrap();
        let enc = 18 * 32 + 32;
        let heads = 2 * (512 * 4 + 4);
        assert_eq!(pol.params().num_scalars(), enc + 32 * 512 + 512 + 512 * 512 + 512 + heads);
    }

    #[test]
    fn zero_weights_give_bias_only_output() {
        let mut pol = MlpPolicy::<f64>::new(
            MlpConfig {
                hidden: 8,
                ..MlpConfig::new(4, 2)
            },
            1,
        )
        .unwrap();
        let ids: Vec<_> = pol.params().ids().collect();
        for id in ids {
            pol.params_mut().get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let b = pol.params().id("std_head.bias").unwrap();
        pol.params_mut().get_mut(b).data_mut().copy_from_slice(&[0.0, 2.0]);
        let mut s = pol.initial_state(1);
        let d = pol.act(&mut s, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(d.mu, vec![0.0, 0.0]);
        assert_eq!(d.sigma, vec![softplus_floor(0.0), softplus_floor(2.0)]);
    }
}
