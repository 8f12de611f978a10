use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numeric::{Activation, Linear, ParamStore, Tape, Tensor2, Var};
use crate::scalar::Scalar;

/// State-value MLP `obs → 256 → 256 → 1` with rectifiers.
#[derive(Debug, Clone)]
pub struct ValueNet<T> {
    params: ParamStore<T>,
    layers: [Linear; 3],
}

impl<T: Scalar> ValueNet<T> {
    pub const HIDDEN: usize = 256;

    pub fn new(obs_dim: usize, seed: u64) -> Result<Self> {
        Self::with_hidden(obs_dim, Self::HIDDEN, seed)
    }

    pub fn with_hidden(obs_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let l1 = p.add_linear("value.fc1", obs_dim, hidden, &mut rng)?;
        let l2 = p.add_linear("value.fc2", hidden, hidden, &mut rng)?;
        let l3 = p.add_linear("value.out", hidden, 1, &mut rng)?;
        Ok(ValueNet {
            params: p,
            layers: [l1, l2, l3],
        })
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// `rows x 1` values for `rows x obs_dim` normalized observations.
    pub fn forward(&self, tape: &mut Tape<T>, p: &ParamStore<T>, obs: Var) -> Result<Var> {
        let h = self.layers[0].forward(tape, p, obs)?;
        let h = tape.activation(Activation::Relu, h)?;
        let h = self.layers[1].forward(tape, p, h)?;
        let h = tape.activation(Activation::Relu, h)?;
        self.layers[2].forward(tape, p, h)
    }

    pub fn values(&self, obs: Tensor2<T>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let x = tape.input(obs);
        let v = self.forward(&mut tape, &self.params, x)?;
        Ok(tape.value(v).data().to_vec())
    }
}
