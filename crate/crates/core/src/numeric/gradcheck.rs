//! Central finite-difference verification of taped gradients (64-bit only).

use super::params::{Gradients, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Entries are compared as `|a − n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Checks at most this many evenly spaced entries per block (`None` = all).
    pub max_entries_per_block: Option<usize>,
    /// One-sided slopes disagreeing by more than this (relative) mark a
    /// rectifier kink; such entries are skipped and counted.
    pub kink_tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-5,
            max_entries_per_block: None,
            kink_tolerance: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance && self.blocks.iter().any(|b| b.checked > 0)
    }

    pub fn worst_block(&self) -> Option<&BlockReport> {
        self.blocks.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

pub fn grad_check<F>(store: &mut ParamStore<f64>, forward: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    grad_check_with(store, forward, cfg, |_| {})
}

/// Like [`grad_check`], letting the caller tamper with the analytic gradients
/// before comparison (used to confirm the check can fail).
pub fn grad_check_with<F, G>(store: &mut ParamStore<f64>, mut forward: F, cfg: &GradCheckConfig, tamper: G) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
    G: FnOnce(&mut Gradients<f64>),
{
    let analytic = {
        let mut tape = Tape::new();
        let loss = forward(store, &mut tape)?;
        if !tape.try_value(loss)?.item().is_finite() {
            return Err(Error::NonFinite("grad_check loss".into()));
        }
        let mut g = tape.backward_scalar(loss)?;
        tamper(&mut g);
        g
    };

    let mut eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = forward(store, &mut tape)?;
        let v = tape.try_value(loss)?.item();
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check loss".into()));
        }
        Ok(v)
    };

    let h = cfg.step;
    let ids: Vec<_> = store.ids().collect();
    let mut blocks = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.get(id).len();
        let picks: Vec<usize> = match cfg.max_entries_per_block {
            Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
            _ => (0..n).collect(),
        };
        let mut report = BlockReport {
            name: store.name(id).to_string(),
            max_rel_err: 0.0,
            checked: 0,
            skipped_kinks: 0,
        };
        for e in picks {
            let orig = store.get(id).data()[e];
            let f0 = eval(store)?;
            store.get_mut(id).data_mut()[e] = orig + h;
            let fp = eval(store)?;
            store.get_mut(id).data_mut()[e] = orig - h;
            let fm = eval(store)?;
            store.get_mut(id).data_mut()[e] = orig;

            let right = (fp - f0) / h;
            let left = (f0 - fm) / h;
            if (right - left).abs() > cfg.kink_tolerance * right.abs().max(left.abs()).max(1.0) {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[e]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.checked += 1;
        }
        blocks.push(report);
    }
    let max_rel_err = blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        blocks,
        max_rel_err,
        tolerance: cfg.tolerance,
    })
}
