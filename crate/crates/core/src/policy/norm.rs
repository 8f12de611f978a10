use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Online per-dimension observation standardizer (Welford updates).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningNorm {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    eps: f64,
    frozen: bool,
}

impl RunningNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(dim: usize) -> Self {
        RunningNorm {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            eps: Self::EPS,
            frozen: false,
        }
    }

    pub fn from_parts(count: u64, mean: Vec<f64>, m2: Vec<f64>) -> Result<Self> {
        if mean.len() != m2.len() {
            return Err(Error::shape("running norm mean and m2 lengths differ"));
        }
        if m2.iter().any(|&v| !(v >= 0.0)) || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("running norm statistics must be finite with m2 >= 0"));
        }
        Ok(RunningNorm {
            count,
            mean,
            m2,
            eps: Self::EPS,
            frozen: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn m2(&self) -> &[f64] {
        &self.m2
    }

    /// Population variance per dimension.
    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.dim()];
        }
        self.m2.iter().map(|&m| m / self.count as f64).collect()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Frozen copy for read-only use by rollout workers.
    pub fn snapshot(&self) -> RunningNorm {
        let mut s = self.clone();
        s.frozen = true;
        s
    }

    fn check<T: Scalar>(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::shape(format!("observation has {} values, normalizer expects {}", x.len(), self.dim())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation".into()));
        }
        Ok(())
    }

    /// Folds `x` into the statistics; a no-op when frozen.
    pub fn update<T: Scalar>(&mut self, x: &[T]) -> Result<()> {
        self.check(x)?;
        if self.frozen {
            return Ok(());
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let v = v.as_f64();
            let delta = v - *m;
            *m += delta / n;
            *m2 += delta * (v - *m);
        }
        Ok(())
    }

    pub fn apply<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        self.check(x)?;
        let var = self.variance();
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&var)
            .map(|((&v, &m), &s2)| T::of((v.as_f64() - m) / (s2 + self.eps).sqrt()))
            .collect())
    }

    pub fn update_apply<T: Scalar>(&mut self, x: &[T]) -> Result<Vec<T>> {
        self.update(x)?;
        self.apply(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_sample_maps_to_zero() {
        let mut rn = RunningNorm::new(3);
        let out = rn.update_apply(&[1.0f64, -2.0, 5.0]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn two_sample_statistics() {
        let mut rn = RunningNorm::new(1);
        rn.update(&[1.0f64]).unwrap();
        rn.update(&[3.0f64]).unwrap();
        assert_eq!(rn.mean(), &[2.0]);
        assert_eq!(rn.variance(), vec![1.0]);
        let y = rn.apply(&[3.0f64]).unwrap()[0];
        assert!((y - 1.0 / (1.0f64 + 1e-5).sqrt()).abs() < 1e-15);
        assert!((y - 0.999995).abs() < 1e-6);
    }

    #[test]
    fn constant_stream_goes_to_zero() {
        let mut rn = RunningNorm::new(2);
        let mut last = vec![];
        for _ in 0..50 {
            last = rn.update_apply(&[4.0f64, -1.0]).unwrap();
        }
        assert!(last.iter().all(|v| v.abs() < 1e-9));
        assert!(rn.variance().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn frozen_is_pure() {
        let mut rn = RunningNorm::new(1);
        rn.update(&[1.0f64]).unwrap();
        rn.update(&[2.0f64]).unwrap();
        rn.freeze();
        let before = rn.clone();
        let a = rn.update_apply(&[10.0f64]).unwrap();
        let b = rn.update_apply(&[10.0f64]).unwrap();
        assert_eq!(a, b);
        assert_eq!(rn, before);
        assert!(rn.apply(&[1.0f64, 2.0]).is_err());
    }
}
