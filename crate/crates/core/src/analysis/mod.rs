//! Representation analysis over recorded neuron states: PCA intensity
//! reduction, per-superclass downsampling, similarity blending and Fiedler
//! ordering, plus CSV/SVG report emission.

mod report;
mod spectral;

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::connectome::{Connectome, FlowClass};
use crate::error::{Error, Result};
use crate::persistence::Recording;

pub use report::{emit_report, write_intensity_csv, write_svg_heatmap, ReportFiles};
pub use spectral::{normalized_laplacian, similarity_matrix, spectral_order, SimilarityConfig, SpectralOrder};

/// Recorded states `steps x neurons x channels` with per-neuron labels.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRecording {
    pub steps: usize,
    pub neurons: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub flow: Vec<FlowClass>,
    pub superclass: Vec<String>,
    /// Original neuron ids of the columns.
    pub ids: Vec<usize>,
}

impl StateRecording {
    pub fn new(steps: usize, neurons: usize, channels: usize, data: Vec<f64>, flow: Vec<FlowClass>, superclass: Vec<String>) -> Result<Self> {
        if data.len() != steps * neurons * channels || flow.len() != neurons || superclass.len() != neurons {
            return Err(Error::shape("recording data or labels do not match its dimensions"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state recording".into()));
        }
        Ok(StateRecording {
            steps,
            neurons,
            channels,
            data,
            flow,
            superclass,
            ids: (0..neurons).collect(),
        })
    }

    pub fn from_recording(rec: &Recording, c: &Connectome) -> Result<Self> {
        if rec.neurons != c.len() {
            return Err(Error::shape(format!("recording has {} neurons, connectome has {}", rec.neurons, c.len())));
        }
        Self::new(
            rec.steps,
            rec.neurons,
            rec.channels,
            rec.data.iter().map(|&v| v as f64).collect(),
            c.flow_classes(),
            c.superclass_labels(),
        )
    }

    pub fn value(&self, t: usize, n: usize, c: usize) -> f64 {
        self.data[(t * self.neurons + n) * self.channels + c]
    }

    /// Keeps the given columns in the given order.
    pub fn select(&self, keep: &[usize]) -> StateRecording {
        let mut data = Vec::with_capacity(self.steps * keep.len() * self.channels);
        for t in 0..self.steps {
            for &n in keep {
                let at = (t * self.neurons + n) * self.channels;
                data.extend_from_slice(&self.data[at..at + self.channels]);
            }
        }
        StateRecording {
            steps: self.steps,
            neurons: keep.len(),
            channels: self.channels,
            data,
            flow: keep.iter().map(|&n| self.flow[n]).collect(),
            superclass: keep.iter().map(|&n| self.superclass[n].clone()).collect(),
            ids: keep.iter().map(|&n| self.ids[n]).collect(),
        }
    }
}

/// Per-neuron intensities `steps x neurons` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMap {
    pub steps: usize,
    pub neurons: usize,
    pub data: Vec<f64>,
    /// First-component loadings over channels.
    pub loadings: Vec<f64>,
    /// 5th and 95th percentiles of the raw projection.
    pub clip: (f64, f64),
}

impl IntensityMap {
    pub fn get(&self, t: usize, n: usize) -> f64 {
        self.data[t * self.neurons + n]
    }

    /// Time series of neuron `n`.
    pub fn series(&self, n: usize) -> Vec<f64> {
        (0..self.steps).map(|t| self.get(t, n)).collect()
    }

    pub fn select(&self, keep: &[usize]) -> IntensityMap {
        let data = (0..self.steps).flat_map(|t| keep.iter().map(move |&n| self.get(t, n))).collect();
        IntensityMap {
            steps: self.steps,
            neurons: keep.len(),
            data,
            loadings: self.loadings.clone(),
            clip: self.clip,
        }
    }
}

/// Linear-interpolation percentile (`q` in `[0, 1]`) of sorted values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Leading principal axis of the `rows x cols` sample matrix, sign fixed so
/// the largest-magnitude loading is positive. Also returns the column means.
pub fn first_principal_axis(x: &[f64], rows: usize, cols: usize) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if rows < 2 || cols == 0 || x.len() != rows * cols {
        return Err(Error::shape("PCA needs at least two samples and one channel"));
    }
    let mut mean = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            mean[c] += x[r * cols + c];
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut cov = DMatrix::<f64>::zeros(cols, cols);
    for r in 0..rows {
        for i in 0..cols {
            let di = x[r * cols + i] - mean[i];
            for j in i..cols {
                cov[(i, j)] += di * (x[r * cols + j] - mean[j]);
            }
        }
    }
    for i in 0..cols {
        for j in i..cols {
            let v = cov[(i, j)] / (rows - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let k = (0..cols).max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).unwrap();
    let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
    let lead = (0..cols).max_by(|&a, &b| axis[a].abs().total_cmp(&axis[b].abs()).then(b.cmp(&a))).unwrap();
    if axis[lead] < 0.0 {
        axis.iter_mut().for_each(|v| *v = -*v);
    }
    Ok((axis, mean, eig.eigenvalues[k]))
}

/// First-principal-component projection, clipped to the global 5th–95th
/// percentile range and min-max scaled to `[0, 1]`.
pub fn reduce_intensity(rec: &StateRecording) -> Result<IntensityMap> {
    if rec.steps < 2 || rec.channels == 0 || rec.neurons == 0 {
        return Err(Error::shape("intensity reduction needs T >= 2, N >= 1 and C >= 1"));
    }
    let rows = rec.steps * rec.neurons;
    let (axis, mean, var) = first_principal_axis(&rec.data, rows, rec.channels)?;
    let proj: Vec<f64> = rec
        .data
        .chunks_exact(rec.channels)
        .map(|x| x.iter().zip(&mean).zip(&axis).map(|((v, m), a)| (v - m) * a).sum())
        .collect();
    let mut sorted = proj.clone();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (percentile(&sorted, 0.05), percentile(&sorted, 0.95));
    let data = if !(var > 0.0) || !(hi > lo) {
        warn!("recording has no spread along its first component; intensity set to 0.5");
        vec![0.5; rows]
    } else {
        proj.iter().map(|&p| (p.clamp(lo, hi) - lo) / (hi - lo)).collect()
    };
    Ok(IntensityMap {
        steps: rec.steps,
        neurons: rec.neurons,
        data,
        loadings: axis,
        clip: (lo, hi),
    })
}

/// Default per-superclass display caps.
pub fn default_caps() -> BTreeMap<String, usize> {
    [
        ("optic", 1500),
        ("central", 400),
        ("sensory", 400),
        ("ascending", 200),
        ("visual_projection", 120),
        ("visual_centrifugal", 120),
        ("descending", 120),
        ("motor", 100),
        ("endocrine", 60),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Indices kept when each capped superclass is thinned to at most its cap by
/// uniform sampling without replacement. Classes without a cap are kept in
/// full. The result is ascending, so relative order survives.
pub fn downsample_indices(superclass: &[String], caps: &BTreeMap<String, usize>, seed: u64) -> Result<Vec<usize>> {
    if let Some((k, _)) = caps.iter().find(|(_, &v)| v == 0) {
        return Err(Error::invalid(format!("cap for {k} must be >= 1")));
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in superclass.iter().enumerate() {
        members.entry(s.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(superclass.len());
    for (class, idx) in members {
        match caps.get(class) {
            Some(&cap) if idx.len() > cap => {
                let picks = rand::seq::index::sample(&mut rng, idx.len(), cap);
                keep.extend(picks.into_iter().map(|p| idx[p]));
            }
            _ => keep.extend(idx),
        }
    }
    keep.sort_unstable();
    Ok(keep)
}

pub fn stratified_downsample(rec: &StateRecording, caps: &BTreeMap<String, usize>, seed: u64) -> Result<StateRecording> {
    Ok(rec.select(&downsample_indices(&rec.superclass, caps, seed)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(steps: usize, neurons: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f64) -> StateRecording {
        let mut data = Vec::new();
        for t in 0..steps {
            for n in 0..neurons {
                for c in 0..channels {
                    data.push(f(t, n, c));
                }
            }
        }
        StateRecording::new(
            steps,
            neurons,
            channels,
            data,
            vec![FlowClass::Intrinsic; neurons],
            vec!["central".into(); neurons],
        )
        .unwrap()
    }

    #[test]
    fn single_channel_is_clipped_min_max() {
        let r = rec(10, 2, 1, |t, n, _| (t * 2 + n) as f64);
        let m = reduce_intensity(&r).unwrap();
        let raw: Vec<f64> = (0..20).map(|v| v as f64).collect();
        let (lo, hi) = (percentile(&raw, 0.05), percentile(&raw, 0.95));
        for (k, &v) in raw.iter().enumerate() {
            assert!((m.data[k] - (v.clamp(lo, hi) - lo) / (hi - lo)).abs() < 1e-12);
        }
        assert_eq!((m.data[0], m.data[19]), (0.0, 1.0));
        assert_eq!(m.loadings, vec![1.0]);
    }

    #[test]
    fn dominant_channel_wins() {
        let r = rec(8, 3, 3, |t, n, c| if c == 0 { ((t * 3 + n) % 5) as f64 * 10.0 } else { 2.0 });
        let m = reduce_intensity(&r).unwrap();
        assert!((m.loadings[0] - 1.0).abs() < 1e-12);
        assert!(m.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn constant_recording_is_half() {
        let m = reduce_intensity(&rec(4, 2, 2, |_, _, _| 3.0)).unwrap();
        assert!(m.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn caps_and_determinism() {
        let mut labels = vec!["central".to_string(); 5000];
        labels.extend(vec!["motor".to_string(); 50]);
        labels.extend(vec!["unlisted".to_string(); 7]);
        let caps = default_caps();
        let a = downsample_indices(&labels, &caps, 4).unwrap();
        let b = downsample_indices(&labels, &caps, 4).unwrap();
        assert_eq!(a, b);
        let count = |c: &str| a.iter().filter(|&&i| labels[i] == c).count();
        assert_eq!((count("central"), count("motor"), count("unlisted")), (400, 50, 7));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }
}
