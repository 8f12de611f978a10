use std::path::Path;

use super::container::{read_container, write_container, Entry, TensorData};
use crate::connectome::SignedOperator;
use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tensor2};
use crate::policy::RunningNorm;
use crate::scalar::{DType, Scalar};
use crate::training::AdamW;

fn tensor_entry<T: Scalar>(name: String, t: &Tensor2<T>) -> Result<Entry> {
    let dims = vec![t.rows() as u64, t.cols() as u64];
    let data = match T::DTYPE {
        DType::F32 => TensorData::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
        DType::F64 => TensorData::F64(t.data().iter().map(|v| v.as_f64()).collect()),
    };
    Entry::new(name, dims, data)
}

/// Saves parameters, optionally with the observation normalizer and the
/// optimizer state. Tensor names: `param/<name>`, `norm/obs/{count,mean,m2}`,
/// `opt/step`, `opt/m/<name>`, `opt/v/<name>`.
pub fn save_checkpoint<T: Scalar>(path: &Path, params: &ParamStore<T>, norm: Option<&RunningNorm>, opt: Option<&AdamW<T>>) -> Result<()> {
    let mut entries = Vec::new();
    for (_, name, t) in params.iter() {
        t.ensure_finite(name)?;
        entries.push(tensor_entry(format!("param/{name}"), t)?);
    }
    if let Some(n) = norm {
        let d = n.dim() as u64;
        entries.push(Entry::f64("norm/obs/count", vec![1], vec![n.count() as f64])?);
        entries.push(Entry::f64("norm/obs/mean", vec![d], n.mean().to_vec())?);
        entries.push(Entry::f64("norm/obs/m2", vec![d], n.m2().to_vec())?);
    }
    if let Some(o) = opt {
        if o.m.len() != params.len() {
            return Err(Error::shape("optimizer state does not match the parameter set"));
        }
        entries.push(Entry::f64("opt/step", vec![1], vec![o.step as f64])?);
        for (i, (_, name, _)) in params.iter().enumerate() {
            entries.push(tensor_entry(format!("opt/m/{name}"), &o.m[i])?);
            entries.push(tensor_entry(format!("opt/v/{name}"), &o.v[i])?);
        }
    }
    write_container(path, &entries)
}

/// Loaded checkpoint; tensors are matched against a model on restore.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Ok(Checkpoint {
        entries: read_container(path)?,
    })
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn matched<T: Scalar>(&self, name: &str, t: &Tensor2<T>) -> Result<&Entry> {
        let e = self.get(name).ok_or_else(|| Error::shape(format!("checkpoint has no tensor {name}")))?;
        let want = [t.rows() as u64, t.cols() as u64];
        if e.dims != want {
            return Err(Error::shape(format!("tensor {name}: checkpoint {:?}, model {:?}", e.dims, want)));
        }
        if e.data.dtype() != T::DTYPE {
            return Err(Error::shape(format!(
                "tensor {name}: checkpoint is {:?}, model is {:?}",
                e.data.dtype(),
                T::DTYPE
            )));
        }
        Ok(e)
    }

    fn assign<T: Scalar>(e: &Entry, t: &mut Tensor2<T>) {
        match &e.data {
            TensorData::F32(v) => t.data_mut().iter_mut().zip(v).for_each(|(d, &s)| *d = T::of(s as f64)),
            TensorData::F64(v) => t.data_mut().iter_mut().zip(v).for_each(|(d, &s)| *d = T::of(s)),
        }
    }

    /// Copies every `param/*` tensor into `params`. All names, shapes and
    /// element types are validated before anything is written.
    pub fn restore_params<T: Scalar>(&self, params: &mut ParamStore<T>) -> Result<()> {
        let n_saved = self.entries.iter().filter(|e| e.name.starts_with("param/")).count();
        if n_saved != params.len() {
            return Err(Error::shape(format!("checkpoint has {n_saved} parameter tensors, model has {}", params.len())));
        }
        let mut found = Vec::with_capacity(params.len());
        for (id, name, t) in params.iter() {
            found.push((id, self.matched(&format!("param/{name}"), t)?));
        }
        for (id, e) in found {
            Self::assign(e, params.get_mut(id));
        }
        Ok(())
    }

    /// Returns `None` when the checkpoint carries no normalizer.
    pub fn norm(&self) -> Result<Option<RunningNorm>> {
        let (Some(c), Some(m), Some(s)) = (self.get("norm/obs/count"), self.get("norm/obs/mean"), self.get("norm/obs/m2")) else {
            return Ok(None);
        };
        let count = c.data.to_f64();
        if count.len() != 1 || !(count[0] >= 0.0) || count[0].fract() != 0.0 {
            return Err(Error::Corrupt("norm/obs/count is not a count".into()));
        }
        RunningNorm::from_parts(count[0] as u64, m.data.to_f64(), s.data.to_f64()).map(Some)
    }

    /// Restores optimizer moments; returns `false` when none were saved.
    pub fn restore_optimizer<T: Scalar>(&self, params: &ParamStore<T>, opt: &mut AdamW<T>) -> Result<bool> {
        let Some(step) = self.get("opt/step") else {
            return Ok(false);
        };
        if opt.m.len() != params.len() {
            return Err(Error::shape("optimizer state does not match the parameter set"));
        }
        let mut found = Vec::with_capacity(params.len());
        for (i, (_, name, _)) in params.iter().enumerate() {
            let m = self.matched(&format!("opt/m/{name}"), &opt.m[i])?;
            let v = self.matched(&format!("opt/v/{name}"), &opt.v[i])?;
            found.push((m, v));
        }
        for (i, (m, v)) in found.into_iter().enumerate() {
            Self::assign(m, &mut opt.m[i]);
            Self::assign(v, &mut opt.v[i]);
        }
        opt.step = step.data.to_f64().first().copied().unwrap_or(0.0) as u64;
        Ok(true)
    }
}

/// Per-step neuron states `steps x neurons x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub steps: usize,
    pub neurons: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Recording {
    pub fn new(neurons: usize, channels: usize) -> Self {
        Recording {
            steps: 0,
            neurons,
            channels,
            data: Vec::new(),
        }
    }

    /// Appends one `neurons x channels` frame.
    pub fn push<T: Scalar>(&mut self, frame: &Tensor2<T>) -> Result<()> {
        if frame.shape() != (self.neurons, self.channels) {
            return Err(Error::shape(format!(
                "frame {:?}, recording expects ({}, {})",
                frame.shape(),
                self.neurons,
                self.channels
            )));
        }
        self.data.extend(frame.data().iter().map(|v| v.as_f64() as f32));
        self.steps += 1;
        Ok(())
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.neurons * self.channels;
        &self.data[t * n..(t + 1) * n]
    }
}

pub fn save_recording(path: &Path, rec: &Recording) -> Result<()> {
    let dims = vec![rec.steps as u64, rec.neurons as u64, rec.channels as u64];
    write_container(path, &[Entry::f32("states", dims, rec.data.clone())?])
}

pub fn load_recording(path: &Path) -> Result<Recording> {
    let entries = read_container(path)?;
    let e = entries
        .iter()
        .find(|e| e.name == "states")
        .ok_or_else(|| Error::Corrupt("recording has no states tensor".into()))?;
    let (TensorData::F32(data), [t, n, c]) = (&e.data, e.dims.as_slice()) else {
        return Err(Error::Corrupt("states must be a rank-3 f32 tensor".into()));
    };
    Ok(Recording {
        steps: *t as usize,
        neurons: *n as usize,
        channels: *c as usize,
        data: data.clone(),
    })
}

pub fn save_operator(path: &Path, op: &SignedOperator<f64>) -> Result<()> {
    let as_f64 = |v: &[usize]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let entries = [
        Entry::f64("op/dim", vec![1], vec![op.dim() as f64])?,
        Entry::f64("op/offsets", vec![op.row_offsets().len() as u64], as_f64(op.row_offsets()))?,
        Entry::f64("op/indices", vec![op.nnz() as u64], as_f64(op.col_indices()))?,
        Entry::f64("op/values", vec![op.nnz() as u64], op.values().to_vec())?,
    ];
    write_container(path, &entries)
}

pub fn load_operator(path: &Path) -> Result<SignedOperator<f64>> {
    let entries = read_container(path)?;
    let get = |name: &str| -> Result<Vec<f64>> {
        entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.data.to_f64())
            .ok_or_else(|| Error::Corrupt(format!("operator cache has no {name}")))
    };
    let as_idx = |v: Vec<f64>| -> Result<Vec<usize>> {
        v.into_iter()
            .map(|x| {
                if x >= 0.0 && x.fract() == 0.0 {
                    Ok(x as usize)
                } else {
                    Err(Error::Corrupt("non-integer index".into()))
                }
            })
            .collect()
    };
    let dim = as_idx(get("op/dim")?)?;
    if dim.len() != 1 {
        return Err(Error::Corrupt("op/dim must hold one value".into()));
    }
    SignedOperator::from_csr_parts(dim[0], as_idx(get("op/offsets")?)?, as_idx(get("op/indices")?)?, get("op/values")?)
}
