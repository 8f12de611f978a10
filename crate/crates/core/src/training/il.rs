use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::lambda_schedule;
use super::optim::AdamW;
use crate::env::Dataset;
use crate::error::{Error, Result};
use crate::numeric::{Tape, Tensor2, Var};
use crate::policy::{Policy, RunningNorm};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct IlConfig {
    pub alpha: f64,
    pub lambda0: f64,
    pub lambda_end_frac: f64,
    /// Episodes per batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub grad_clip_norm: f64,
    /// Truncated backpropagation window in steps.
    pub bptt_window: usize,
    pub seed: u64,
}

impl Default for IlConfig {
    fn default() -> Self {
        IlConfig {
            alpha: 0.1,
            lambda0: 1.0,
            lambda_end_frac: 0.8,
            batch_size: 8,
            epochs: 200,
            lr: 1e-3,
            grad_clip_norm: 1.0,
            bptt_window: 16,
            seed: 0,
        }
    }
}

impl IlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.lambda0 >= 0.0) {
            return Err(Error::invalid("alpha and lambda0 must be non-negative"));
        }
        if !(self.lambda_end_frac > 0.0 && self.lambda_end_frac <= 1.0) {
            return Err(Error::invalid("lambda_end_frac must lie in (0, 1]"));
        }
        if self.batch_size == 0 || self.bptt_window == 0 {
            return Err(Error::invalid("batch_size and bptt_window must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("lr must be positive"));
        }
        Ok(())
    }
}

/// One row of the loss curve. Row 0 is measured before any update; later
/// rows average over the training pass of that epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IlEpoch {
    pub epoch: usize,
    pub lambda: f64,
    pub total: f64,
    pub mu_mse: f64,
    pub log_sigma_mse: f64,
}

struct Prepared<T> {
    obs: Vec<Tensor2<T>>,
    mu: Vec<Tensor2<T>>,
    sigma: Vec<Tensor2<T>>,
}

fn prepare<T: Scalar>(data: &Dataset, norm: &RunningNorm) -> Result<Prepared<T>> {
    let mut p = Prepared {
        obs: Vec::with_capacity(data.episodes.len()),
        mu: Vec::with_capacity(data.episodes.len()),
        sigma: Vec::with_capacity(data.episodes.len()),
    };
    for ep in &data.episodes {
        let n = ep.len();
        let mut obs = Vec::with_capacity(n * data.obs_dim);
        let mut mu = Vec::with_capacity(n * data.act_dim);
        let mut sigma = Vec::with_capacity(n * data.act_dim);
        for tr in &ep.steps {
            obs.extend(norm.apply::<f64>(&tr.obs.iter().map(|&v| v as f64).collect::<Vec<_>>())?.into_iter().map(T::of));
            mu.extend(tr.expert_mu.iter().map(|&v| T::of(v as f64)));
            sigma.extend(tr.expert_sigma.iter().map(|&v| T::of(v as f64)));
        }
        p.obs.push(Tensor2::from_vec(n, data.obs_dim, obs)?);
        p.mu.push(Tensor2::from_vec(n, data.act_dim, mu)?);
        p.sigma.push(Tensor2::from_vec(n, data.act_dim, sigma)?);
    }
    Ok(p)
}

#[derive(Default)]
struct Sums {
    rows: f64,
    total: f64,
    mu_se: f64,
    log_sigma_se: f64,
}

fn gather_step<T: Scalar>(src: &[Tensor2<T>], eps: &[usize], t: usize, cols: usize, fill: T) -> Tensor2<T> {
    let mut out = Tensor2::filled(eps.len(), cols, fill);
    for (b, &e) in eps.iter().enumerate() {
        if t < src[e].rows() {
            out.row_mut(b).copy_from_slice(src[e].row(t));
        }
    }
    out
}

/// Runs one batch of episodes window by window; updates parameters when
/// `opt` is given.
#[allow(clippy::too_many_arguments)]
fn run_batch<T: Scalar, P: Policy<T>>(
    policy: &mut P,
    data: &Prepared<T>,
    eps: &[usize],
    act_dim: usize,
    obs_dim: usize,
    lambda: f64,
    cfg: &IlConfig,
    mut opt: Option<&mut AdamW<T>>,
    sums: &mut Sums,
) -> Result<()> {
    let batch = eps.len();
    let horizon = eps.iter().map(|&e| data.obs[e].rows()).max().unwrap_or(0);
    let mut state = policy.initial_state(batch);
    let mut start = 0;
    while start < horizon {
        let end = (start + cfg.bptt_window).min(horizon);
        let active: Vec<usize> = (start..end).map(|t| eps.iter().filter(|&&e| t < data.obs[e].rows()).count()).collect();
        let n_window: usize = active.iter().sum();
        let mut tape = Tape::new();
        let mut h = tape.input(std::mem::replace(&mut state, Tensor2::zeros(0, 0)));
        let mut loss: Option<Var> = None;
        for (k, t) in (start..end).enumerate() {
            let obs = tape.input(gather_step(&data.obs, eps, t, obs_dim, T::zero()));
            let out = policy.step(&mut tape, policy.params(), h, obs, batch)?;
            h = out.state;
            let mask: Vec<T> = eps.iter().map(|&e| if t < data.obs[e].rows() { T::one() } else { T::zero() }).collect();
            let emu = gather_step(&data.mu, eps, t, act_dim, T::zero());
            let esig = gather_step(&data.sigma, eps, t, act_dim, T::one());
            {
                let (mv, sv) = (tape.value(out.mu), tape.value(out.sigma));
                for (b, &m) in mask.iter().enumerate() {
                    if m == T::zero() {
                        continue;
                    }
                    for j in 0..act_dim {
                        sums.mu_se += (mv.get(b, j) - emu.get(b, j)).as_f64().powi(2) / act_dim as f64;
                        sums.log_sigma_se += (sv.get(b, j).ln() - esig.get(b, j).ln()).as_f64().powi(2) / act_dim as f64;
                    }
                }
            }
            let lt = tape.imitation_loss(out.mu, out.sigma, emu, esig, T::of(lambda), T::of(cfg.alpha), Some(mask))?;
            let lv = tape.value(lt).item().as_f64();
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("imitation loss at step {t}")));
            }
            sums.total += lv * active[k] as f64;
            let weighted = tape.scale(lt, T::of(active[k] as f64 / n_window as f64))?;
            loss = Some(match loss {
                Some(acc) => tape.add(acc, weighted)?,
                None => weighted,
            });
        }
        sums.rows += n_window as f64;
        state = tape.value(h).clone();
        if let (Some(opt), Some(loss)) = (opt.as_deref_mut(), loss) {
            let grads = tape.backward_scalar(loss)?;
            opt.apply(policy.params_mut(), &grads)?;
        }
        start = end;
    }
    Ok(())
}

fn run_epoch<T: Scalar, P: Policy<T>>(
    policy: &mut P,
    data: &Prepared<T>,
    dims: (usize, usize),
    order: &[usize],
    lambda: f64,
    cfg: &IlConfig,
    mut opt: Option<&mut AdamW<T>>,
) -> Result<Sums> {
    let mut sums = Sums::default();
    for chunk in order.chunks(cfg.batch_size) {
        run_batch(policy, data, chunk, dims.1, dims.0, lambda, cfg, opt.as_deref_mut(), &mut sums)?;
    }
    Ok(sums)
}

fn row(epoch: usize, lambda: f64, s: &Sums) -> IlEpoch {
    let n = s.rows.max(1.0);
    IlEpoch {
        epoch,
        lambda,
        total: s.total / n,
        mu_mse: s.mu_se / n,
        log_sigma_mse: s.log_sigma_se / n,
    }
}

/// Imitation training on expert action distributions.
///
/// An empty normalizer is fitted on the dataset observations; the normalizer
/// is frozen for the rest of training either way. `on_epoch` sees each curve
/// row after it is produced. On a non-finite loss or gradient the parameters
/// and optimizer state of the last completed epoch are restored and the
/// error is returned.
pub fn train_il<T, P, F>(policy: &mut P, norm: &mut RunningNorm, data: &Dataset, cfg: &IlConfig, opt: &mut AdamW<T>, mut on_epoch: F) -> Result<Vec<IlEpoch>>
where
    T: Scalar,
    P: Policy<T>,
    F: FnMut(&IlEpoch, &P) -> Result<()>,
{
    cfg.validate()?;
    data.validate()?;
    if data.episodes.is_empty() {
        return Err(Error::invalid("imitation dataset is empty"));
    }
    if data.obs_dim != policy.obs_dim() || data.act_dim != policy.action_dim() {
        return Err(Error::shape(format!(
            "dataset is {}→{}, policy is {}→{}",
            data.obs_dim,
            data.act_dim,
            policy.obs_dim(),
            policy.action_dim()
        )));
    }
    if norm.dim() != data.obs_dim {
        return Err(Error::shape("normalizer dimension does not match the dataset"));
    }
    if norm.count() == 0 && !norm.is_frozen() {
        for tr in data.transitions() {
            norm.update(&tr.obs)?;
        }
    }
    norm.freeze();
    opt.cfg.lr = cfg.lr;
    opt.cfg.clip_norm = cfg.grad_clip_norm;

    let prepared = prepare::<T>(data, norm)?;
    let dims = (data.obs_dim, data.act_dim);
    let all: Vec<usize> = (0..data.episodes.len()).collect();

    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let l0 = lambda_schedule(0.0, cfg.lambda0, cfg.lambda_end_frac, cfg.epochs);
    let first = row(0, l0, &run_epoch(policy, &prepared, dims, &all, l0, cfg, None)?);
    on_epoch(&first, policy)?;
    curve.push(first);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for epoch in 1..=cfg.epochs {
        let lambda = lambda_schedule((epoch - 1) as f64, cfg.lambda0, cfg.lambda_end_frac, cfg.epochs);
        let mut order = all.clone();
        order.shuffle(&mut rng);
        let (params_good, opt_good) = (policy.params().clone(), opt.clone());
        let sums = match run_epoch(policy, &prepared, dims, &order, lambda, cfg, Some(opt)) {
            Ok(s) => s,
            Err(e) => {
                policy.params_mut().assign_from(&params_good)?;
                *opt = opt_good;
                return Err(e);
            }
        };
        let r = row(epoch, lambda, &sums);
        info!(
            "il epoch {epoch}: total {:.5} mu_mse {:.5} log_sigma_mse {:.5}",
            r.total, r.mu_mse, r.log_sigma_mse
        );
        on_epoch(&r, policy)?;
        curve.push(r);
    }
    Ok(curve)
}

pub fn write_il_csv(curve: &[IlEpoch], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "lambda", "total", "mu_mse", "log_sigma_mse"])?;
    for r in curve {
        w.write_record([
            r.epoch.to_string(),
            r.lambda.to_string(),
            r.total.to_string(),
            r.mu_mse.to_string(),
            r.log_sigma_mse.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
