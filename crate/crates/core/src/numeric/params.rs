use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor2;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors. Ids are insertion indices and stay stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor2<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor2<T>) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    /// Registers an `out x in` weight and `1 x out` bias, uniformly
    /// initialized in `±1/sqrt(in)`.
    pub fn add_linear(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Result<Linear> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let w = uniform(fan_out, fan_in, bound, rng);
        let b = uniform(1, fan_out, bound, rng);
        Ok(Linear {
            w: self.add(format!("{name}.weight"), w)?,
            b: self.add(format!("{name}.bias"), b)?,
            fan_in,
            fan_out,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor2<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor2<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor2<T>)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor2::len).sum()
    }

    /// Copies values in from another store with identical names and shapes.
    pub fn assign_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let src = other.id(name).ok_or_else(|| Error::shape(format!("tensor {name} missing from source")))?;
            let src = other.get(src);
            if src.shape() != self.values[i].shape() {
                return Err(Error::shape(format!(
                    "tensor {name}: expected {:?}, found {:?}",
                    self.values[i].shape(),
                    src.shape()
                )));
            }
            self.values[i] = src.clone();
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor2::cast).collect(),
        }
    }
}

pub(crate) fn uniform<T: Scalar>(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Tensor2<T> {
    let data = (0..rows * cols).map(|_| T::of(rng.random_range(-bound..=bound))).collect();
    Tensor2::from_vec(rows, cols, data).expect("sized")
}

/// Handle to an affine layer's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.affine(x, w, b)
    }

    pub fn num_scalars(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor2<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub(crate) fn with_len(n: usize) -> Self {
        Gradients { grads: vec![None; n] }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: Tensor2<T>) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor2<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor2<T>)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn global_norm(&self) -> T {
        self.iter().map(|(_, g)| g.sq_norm()).sum::<T>().sqrt()
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_in_place(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|(_, g)| g.is_finite())
    }

    pub fn scale_param(&mut self, id: ParamId, s: T) {
        if let Some(Some(g)) = self.grads.get_mut(id.0) {
            g.scale_in_place(s);
        }
    }

    /// Adds another gradient set into this one.
    pub fn merge(&mut self, other: Gradients<T>) {
        for (i, g) in other.grads.into_iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }
}
