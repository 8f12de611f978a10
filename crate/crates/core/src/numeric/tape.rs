//! Taped reverse-mode differentiation over the fixed set of primitives the
//! graph policy, the baseline MLP and the training losses need.
//!
//! A [`Tape`] records every primitive in execution order; `backward` walks it
//! once in reverse. A tape can be differentiated only once; build a new one
//! (or [`Tape::clear`] it) for the next evaluation.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm_acc, Tensor2};
use crate::connectome::SignedOperator;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    tape: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(T::zero()),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    #[inline]
    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

/// `log(1 + e^x)`, returning `x` itself once `e^-x` is below precision.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::of(30.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Diagnostics gathered while recording a clipped-surrogate loss.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SurrogateStats {
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub entropy: f64,
    pub skipped: usize,
}

/// Constant inputs for the clipped-surrogate primitive.
#[derive(Debug, Clone)]
pub struct SurrogateBatch<T> {
    pub actions: Tensor2<T>,
    pub old_log_probs: Vec<T>,
    pub advantages: Vec<T>,
    /// Row weights; 0 removes a row from the average.
    pub mask: Vec<T>,
}

enum Op<T> {
    Input,
    Param(ParamId),
    Spmm {
        x: usize,
        w: Arc<SignedOperator<T>>,
        batch: usize,
    },
    Affine {
        x: usize,
        w: usize,
        b: usize,
    },
    Act {
        x: usize,
        kind: Activation,
    },
    AddScalar {
        x: usize,
    },
    Scale {
        x: usize,
        c: T,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Sum {
        x: usize,
    },
    ConcatCols {
        a: usize,
        b: usize,
    },
    GatherRows {
        x: usize,
        idx: Arc<[usize]>,
    },
    ScatterRows {
        base: usize,
        src: usize,
        idx: Arc<[usize]>,
    },
    RepeatRows {
        x: usize,
        times: usize,
    },
    TileRows {
        x: usize,
        times: usize,
    },
    Reshape {
        x: usize,
    },
    GroupToBatch {
        x: usize,
        groups: usize,
        batch: usize,
    },
    Imitation {
        mu: usize,
        sigma: usize,
        expert_mu: Tensor2<T>,
        expert_sigma: Tensor2<T>,
        lambda: T,
        alpha: T,
        mask: Vec<T>,
    },
    Surrogate {
        mu: usize,
        sigma: usize,
        batch: SurrogateBatch<T>,
        ratios: Vec<T>,
        eps: T,
        entropy_coef: T,
    },
    Mse {
        pred: usize,
        target: Tensor2<T>,
        mask: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor2<T>,
    op: Op<T>,
}

pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const PAR_THRESHOLD: usize = 1 << 16;

fn spmm_kernel<'a, T: Scalar>(rows: impl Fn(usize) -> (&'a [usize], &'a [T]) + Sync, n: usize, width: usize, x: &[T], out: &mut [T]) {
    let body = |(v, dst): (usize, &mut [T])| {
        let (cols, vals) = rows(v);
        for (&u, &w) in cols.iter().zip(vals) {
            let src = &x[u * width..(u + 1) * width];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + w * s;
            }
        }
    };
    if width == 0 {
        return;
    }
    if n * width >= PAR_THRESHOLD {
        out.par_chunks_mut(width).enumerate().for_each(body);
    } else {
        out.chunks_mut(width).enumerate().for_each(body);
    }
}

/// `M = W·H` where `H` stacks `batch` independent states per neuron:
/// row `u*batch + b` of `h` is neuron `u` in batch element `b`.
pub fn spmm<T: Scalar>(w: &SignedOperator<T>, h: &Tensor2<T>, batch: usize) -> Result<Tensor2<T>> {
    let n = w.dim();
    if batch == 0 || h.rows() != n * batch {
        return Err(Error::shape(format!(
            "spmm: operator is {n}x{n}, state has {} rows for batch {batch}",
            h.rows()
        )));
    }
    let width = batch * h.cols();
    let mut out = Tensor2::zeros(h.rows(), h.cols());
    spmm_kernel(|v| w.row(v), n, width, h.data(), out.data_mut());
    Ok(out)
}

fn spmm_transposed<T: Scalar>(w: &SignedOperator<T>, dm: &Tensor2<T>, batch: usize) -> Tensor2<T> {
    let width = batch * dm.cols();
    let mut out = Tensor2::zeros(dm.rows(), dm.cols());
    spmm_kernel(|u| w.transposed_row(u), w.dim(), width, dm.data(), out.data_mut());
    out
}

fn masked_denominator<T: Scalar>(mask: &[T]) -> T {
    let d: T = mask.iter().copied().sum();
    if d > T::zero() {
        d
    } else {
        T::one()
    }
}

fn gaussian_log_prob<T: Scalar>(mu: &[T], sigma: &[T], a: &[T]) -> T {
    let half_log_2pi = T::of(0.5 * (2.0 * std::f64::consts::PI).ln());
    mu.iter()
        .zip(sigma)
        .zip(a)
        .map(|((&m, &s), &x)| {
            let z = (x - m) / s;
            -s.ln() - half_log_2pi - T::of(0.5) * z * z
        })
        .sum()
}

fn gaussian_entropy<T: Scalar>(sigma: &[T]) -> T {
    let c = T::of(0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln());
    sigma.iter().map(|&s| c + s.ln()).sum()
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    /// Drops all recorded nodes; old handles become invalid.
    pub fn clear(&mut self) {
        self.id = NEXT_TAPE.fetch_add(1, Ordering::Relaxed);
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor2<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            idx: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Tape("variable does not belong to this tape".into()));
        }
        Ok(v.idx)
    }

    fn val(&self, i: usize) -> &Tensor2<T> {
        &self.nodes[i].value
    }

    pub fn value(&self, v: Var) -> &Tensor2<T> {
        &self.nodes[v.idx].value
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor2<T>> {
        Ok(&self.nodes[self.check(v)?].value)
    }

    pub fn input(&mut self, t: Tensor2<T>) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    pub fn spmm(&mut self, w: &Arc<SignedOperator<T>>, x: Var, batch: usize) -> Result<Var> {
        let xi = self.check(x)?;
        let out = spmm(w, self.val(xi), batch)?;
        Ok(self.push(
            out,
            Op::Spmm {
                x: xi,
                w: Arc::clone(w),
                batch,
            },
        ))
    }

    /// `x·Wᵀ + b` with `W` shaped `out x in` and `b` shaped `1 x out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.check(x)?, self.check(w)?, self.check(b)?);
        let (xv, wv, bv) = (self.val(xi), self.val(wi), self.val(bi));
        if xv.cols() != wv.cols() || bv.shape() != (1, wv.rows()) {
            return Err(Error::shape(format!(
                "affine: input {:?}, weight {:?}, bias {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let mut out = Tensor2::zeros(xv.rows(), wv.rows());
        for r in 0..out.rows() {
            out.row_mut(r).copy_from_slice(bv.data());
        }
        gemm_acc(T::one(), xv, false, wv, true, T::one(), &mut out);
        Ok(self.push(out, Op::Affine { x: xi, w: wi, b: bi }))
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let out = self.val(xi).map(|v| kind.apply(v));
        Ok(self.push(out, Op::Act { x: xi, kind }))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        let xi = self.check(x)?;
        let out = self.val(xi).map(|v| v + c);
        Ok(self.push(out, Op::AddScalar { x: xi }))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let xi = self.check(x)?;
        let out = self.val(xi).map(|v| v * c);
        Ok(self.push(out, Op::Scale { x: xi, c }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        if self.val(ai).shape() != self.val(bi).shape() {
            return Err(Error::shape("add: operand shapes differ"));
        }
        let mut out = self.val(ai).clone();
        out.add_assign(self.val(bi));
        Ok(self.push(out, Op::Add { a: ai, b: bi }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (av, bv) = (self.val(ai), self.val(bi));
        if av.shape() != bv.shape() {
            return Err(Error::shape("mul: operand shapes differ"));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor2::from_vec(av.rows(), av.cols(), data)?;
        Ok(self.push(out, Op::Mul { a: ai, b: bi }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let out = Tensor2::scalar(self.val(xi).sum());
        Ok(self.push(out, Op::Sum { x: xi }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (av, bv) = (self.val(ai), self.val(bi));
        if av.rows() != bv.rows() {
            return Err(Error::shape(format!("concat: {} vs {} rows", av.rows(), bv.rows())));
        }
        let cols = av.cols() + bv.cols();
        let mut out = Tensor2::zeros(av.rows(), cols);
        for r in 0..av.rows() {
            let dst = out.row_mut(r);
            dst[..av.cols()].copy_from_slice(av.row(r));
            dst[av.cols()..].copy_from_slice(bv.row(r));
        }
        Ok(self.push(out, Op::ConcatCols { a: ai, b: bi }))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &Arc<[usize]>) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = self.val(xi);
        if idx.iter().any(|&r| r >= xv.rows()) {
            return Err(Error::shape("gather: row index out of range"));
        }
        let mut out = Tensor2::zeros(idx.len(), xv.cols());
        for (k, &r) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(xv.row(r));
        }
        Ok(self.push(out, Op::GatherRows { x: xi, idx: Arc::clone(idx) }))
    }

    /// Copy of `base` with rows `idx` replaced by the rows of `src`.
    /// Indices must be distinct.
    pub fn scatter_rows(&mut self, base: Var, idx: &Arc<[usize]>, src: Var) -> Result<Var> {
        let (bi, si) = (self.check(base)?, self.check(src)?);
        let (bv, sv) = (self.val(bi), self.val(si));
        if sv.rows() != idx.len() || sv.cols() != bv.cols() || idx.iter().any(|&r| r >= bv.rows()) {
            return Err(Error::shape("scatter: shapes or indices inconsistent"));
        }
        let mut out = bv.clone();
        for (k, &r) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(sv.row(k));
        }
        Ok(self.push(
            out,
            Op::ScatterRows {
                base: bi,
                src: si,
                idx: Arc::clone(idx),
            },
        ))
    }

    /// Row `r*times + t` of the output is row `r` of `x`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = self.val(xi);
        let mut out = Tensor2::zeros(xv.rows() * times, xv.cols());
        for r in 0..xv.rows() {
            for t in 0..times {
                out.row_mut(r * times + t).copy_from_slice(xv.row(r));
            }
        }
        Ok(self.push(out, Op::RepeatRows { x: xi, times }))
    }

    /// Stacks `times` copies of `x` vertically.
    pub fn tile_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = self.val(xi);
        let mut data = Vec::with_capacity(xv.len() * times);
        for _ in 0..times {
            data.extend_from_slice(xv.data());
        }
        let out = Tensor2::from_vec(xv.rows() * times, xv.cols(), data)?;
        Ok(self.push(out, Op::TileRows { x: xi, times }))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let xi = self.check(x)?;
        let out = self.val(xi).clone().reshaped(rows, cols)?;
        Ok(self.push(out, Op::Reshape { x: xi }))
    }

    /// `(groups*batch) x C` with rows `g*batch + b` → `batch x (groups*C)`,
    /// placing group `g` of element `b` at columns `g*C..(g+1)*C`.
    pub fn group_to_batch(&mut self, x: Var, groups: usize, batch: usize) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = self.val(xi);
        if xv.rows() != groups * batch {
            return Err(Error::shape(format!("group_to_batch: {} rows for {groups}x{batch}", xv.rows())));
        }
        let c = xv.cols();
        let mut out = Tensor2::zeros(batch, groups * c);
        for g in 0..groups {
            for b in 0..batch {
                out.row_mut(b)[g * c..(g + 1) * c].copy_from_slice(xv.row(g * batch + b));
            }
        }
        Ok(self.push(out, Op::GroupToBatch { x: xi, groups, batch }))
    }

    /// Masked mean over rows of
    /// `KL(N(mu, sigma²) ‖ N(mu_e, sigma_e²)) + λ(‖mu_e − mu‖² + α‖log sigma_e − log sigma‖²)`.
    #[allow(clippy::too_many_arguments)]
    pub fn imitation_loss(
        &mut self,
        mu: Var,
        sigma: Var,
        expert_mu: Tensor2<T>,
        expert_sigma: Tensor2<T>,
        lambda: T,
        alpha: T,
        mask: Option<Vec<T>>,
    ) -> Result<Var> {
        let (mi, si) = (self.check(mu)?, self.check(sigma)?);
        let (mv, sv) = (self.val(mi), self.val(si));
        let shape = mv.shape();
        if sv.shape() != shape || expert_mu.shape() != shape || expert_sigma.shape() != shape {
            return Err(Error::shape("imitation loss: distribution shapes differ"));
        }
        if sv.data().iter().chain(expert_sigma.data()).any(|&s| !(s > T::zero())) {
            return Err(Error::invalid("imitation loss: sigma must be positive"));
        }
        let mask = mask.unwrap_or_else(|| vec![T::one(); shape.0]);
        if mask.len() != shape.0 {
            return Err(Error::shape("imitation loss: mask length"));
        }
        let denom = masked_denominator(&mask);
        let half = T::of(0.5);
        let mut total = T::zero();
        for r in 0..shape.0 {
            if mask[r] == T::zero() {
                continue;
            }
            let mut row = T::zero();
            for c in 0..shape.1 {
                let (mt, st) = (mv.get(r, c), sv.get(r, c));
                let (ms, ss) = (expert_mu.get(r, c), expert_sigma.get(r, c));
                let dm = mt - ms;
                let kl = (ss / st).ln() + (st * st + dm * dm) / (T::of(2.0) * ss * ss) - half;
                let dl = ss.ln() - st.ln();
                row = row + kl + lambda * (dm * dm + alpha * dl * dl);
            }
            total = total + mask[r] * row;
        }
        let out = Tensor2::scalar(total / denom);
        Ok(self.push(
            out,
            Op::Imitation {
                mu: mi,
                sigma: si,
                expert_mu,
                expert_sigma,
                lambda,
                alpha,
                mask,
            },
        ))
    }

    /// Masked mean over rows of `−min(r·A, clip(r, 1−ε, 1+ε)·A) − c_e·H[π]` for
    /// a diagonal Gaussian policy. Rows whose ratio is not finite are dropped.
    pub fn clipped_surrogate(&mut self, mu: Var, sigma: Var, batch: SurrogateBatch<T>, eps: T, entropy_coef: T) -> Result<(Var, SurrogateStats)> {
        let (mi, si) = (self.check(mu)?, self.check(sigma)?);
        let (mv, sv) = (self.val(mi), self.val(si));
        let rows = mv.rows();
        if sv.shape() != mv.shape()
            || batch.actions.shape() != mv.shape()
            || batch.old_log_probs.len() != rows
            || batch.advantages.len() != rows
            || batch.mask.len() != rows
        {
            return Err(Error::shape("surrogate: batch shapes differ"));
        }
        if sv.data().iter().any(|&s| !(s > T::zero())) {
            return Err(Error::invalid("surrogate: sigma must be positive"));
        }
        let mut batch = batch;
        let mut ratios = vec![T::zero(); rows];
        let mut stats = SurrogateStats::default();
        for r in 0..rows {
            if batch.mask[r] == T::zero() {
                continue;
            }
            let logp = gaussian_log_prob(mv.row(r), sv.row(r), batch.actions.row(r));
            let ratio = (logp - batch.old_log_probs[r]).exp();
            if !ratio.is_finite() || !logp.is_finite() {
                batch.mask[r] = T::zero();
                stats.skipped += 1;
                continue;
            }
            ratios[r] = ratio;
        }
        let denom = masked_denominator(&batch.mask);
        let (lo, hi) = (T::one() - eps, T::one() + eps);
        let mut total = T::zero();
        let (mut clipped, mut kl, mut ent_sum) = (0.0, 0.0, 0.0);
        for r in 0..rows {
            let m = batch.mask[r];
            if m == T::zero() {
                continue;
            }
            let (ratio, adv) = (ratios[r], batch.advantages[r]);
            let surr = (ratio * adv).min(ratio.max(lo).min(hi) * adv);
            let ent = gaussian_entropy(sv.row(r));
            total = total + m * (-surr - entropy_coef * ent);
            if ratio < lo || ratio > hi {
                clipped += m.as_f64();
            }
            kl += m.as_f64() * ((ratio - T::one()) - ratio.ln()).as_f64();
            ent_sum += m.as_f64() * ent.as_f64();
        }
        let d = denom.as_f64();
        stats.clip_fraction = clipped / d;
        stats.approx_kl = kl / d;
        stats.entropy = ent_sum / d;
        let out = Tensor2::scalar(total / denom);
        let var = self.push(
            out,
            Op::Surrogate {
                mu: mi,
                sigma: si,
                batch,
                ratios,
                eps,
                entropy_coef,
            },
        );
        Ok((var, stats))
    }

    /// Masked mean over rows of the per-row mean squared error.
    pub fn mse(&mut self, pred: Var, target: Tensor2<T>, mask: Option<Vec<T>>) -> Result<Var> {
        let pi = self.check(pred)?;
        let pv = self.val(pi);
        if pv.shape() != target.shape() {
            return Err(Error::shape("mse: prediction and target shapes differ"));
        }
        let mask = mask.unwrap_or_else(|| vec![T::one(); pv.rows()]);
        let denom = masked_denominator(&mask);
        let cols = T::of(pv.cols().max(1) as f64);
        let mut total = T::zero();
        for r in 0..pv.rows() {
            let row: T = pv.row(r).iter().zip(target.row(r)).map(|(&p, &t)| (p - t) * (p - t)).sum();
            total = total + mask[r] * row / cols;
        }
        let out = Tensor2::scalar(total / denom);
        Ok(self.push(out, Op::Mse { pred: pi, target, mask }))
    }

    pub fn backward_scalar(&mut self, loss: Var) -> Result<Gradients<T>> {
        self.backward(loss, Tensor2::scalar(T::one()))
    }

    /// Propagates `seed = ∂L/∂loss` to every parameter node recorded before
    /// `loss`. Inputs are constants.
    pub fn backward(&mut self, loss: Var, seed: Tensor2<T>) -> Result<Gradients<T>> {
        let li = self.check(loss)?;
        if self.consumed {
            return Err(Error::Tape("backward already ran on this tape; re-run the forward pass".into()));
        }
        if seed.shape() != self.val(li).shape() {
            return Err(Error::Tape("seed gradient shape does not match the loss".into()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor2<T>>> = (0..=li).map(|_| None).collect();
        grads[li] = Some(seed);
        let mut out = Gradients::with_len(0);

        fn acc<T: Scalar>(grads: &mut [Option<Tensor2<T>>], i: usize, g: Tensor2<T>) {
            match &mut grads[i] {
                Some(a) => a.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, g),
                Op::Spmm { x, w, batch } => {
                    let dx = spmm_transposed(w, &g, *batch);
                    acc(&mut grads, *x, dx);
                }
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (self.val(*x), self.val(*w));
                    let mut dx = Tensor2::zeros(xv.rows(), xv.cols());
                    gemm_acc(T::one(), &g, false, wv, false, T::zero(), &mut dx);
                    let mut dw = Tensor2::zeros(wv.rows(), wv.cols());
                    gemm_acc(T::one(), &g, true, xv, false, T::zero(), &mut dw);
                    let db = g.column_sums();
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                    acc(&mut grads, *b, db);
                }
                Op::Act { x, kind } => {
                    let xv = self.val(*x);
                    let y = &node.value;
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .zip(y.data())
                        .map(|((&gi, &xi), &yi)| gi * kind.derivative(xi, yi))
                        .collect();
                    acc(&mut grads, *x, Tensor2::from_vec(g.rows(), g.cols(), data)?);
                }
                Op::AddScalar { x } => acc(&mut grads, *x, g),
                Op::Scale { x, c } => {
                    let c = *c;
                    acc(&mut grads, *x, g.map(|v| v * c));
                }
                Op::Add { a, b } => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (self.val(*a), self.val(*b));
                    let da: Vec<T> = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                    let db: Vec<T> = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    acc(&mut grads, *a, Tensor2::from_vec(g.rows(), g.cols(), da)?);
                    acc(&mut grads, *b, Tensor2::from_vec(g.rows(), g.cols(), db)?);
                }
                Op::Sum { x } => {
                    let (r, c) = self.val(*x).shape();
                    acc(&mut grads, *x, Tensor2::filled(r, c, g.item()));
                }
                Op::ConcatCols { a, b } => {
                    let ca = self.val(*a).cols();
                    let cb = self.val(*b).cols();
                    let mut da = Tensor2::zeros(g.rows(), ca);
                    let mut db = Tensor2::zeros(g.rows(), cb);
                    for r in 0..g.rows() {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::GatherRows { x, idx } => {
                    let xv = self.val(*x);
                    let mut dx = Tensor2::zeros(xv.rows(), xv.cols());
                    for (k, &r) in idx.iter().enumerate() {
                        for (d, &s) in dx.row_mut(r).iter_mut().zip(g.row(k)) {
                            *d = *d + s;
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::ScatterRows { base, src, idx } => {
                    let sc = self.val(*src).cols();
                    let mut ds = Tensor2::zeros(idx.len(), sc);
                    let mut db = g;
                    for (k, &r) in idx.iter().enumerate() {
                        ds.row_mut(k).copy_from_slice(db.row(r));
                        db.row_mut(r).iter_mut().for_each(|v| *v = T::zero());
                    }
                    acc(&mut grads, *base, db);
                    acc(&mut grads, *src, ds);
                }
                Op::RepeatRows { x, times } => {
                    let xv = self.val(*x);
                    let mut dx = Tensor2::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        for t in 0..*times {
                            for (d, &s) in dx.row_mut(r).iter_mut().zip(g.row(r * times + t)) {
                                *d = *d + s;
                            }
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::TileRows { x, times } => {
                    let xv = self.val(*x);
                    let mut dx = Tensor2::zeros(xv.rows(), xv.cols());
                    let chunk = xv.len();
                    for t in 0..*times {
                        for (d, &s) in dx.data_mut().iter_mut().zip(&g.data()[t * chunk..(t + 1) * chunk]) {
                            *d = *d + s;
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Reshape { x } => {
                    let (r, c) = self.val(*x).shape();
                    acc(&mut grads, *x, g.reshaped(r, c)?);
                }
                Op::GroupToBatch { x, groups, batch } => {
                    let c = self.val(*x).cols();
                    let mut dx = Tensor2::zeros(groups * batch, c);
                    for gi in 0..*groups {
                        for b in 0..*batch {
                            dx.row_mut(gi * batch + b).copy_from_slice(&g.row(b)[gi * c..(gi + 1) * c]);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Imitation {
                    mu,
                    sigma,
                    expert_mu,
                    expert_sigma,
                    lambda,
                    alpha,
                    mask,
                } => {
                    let (mv, sv) = (self.val(*mu), self.val(*sigma));
                    let scale = g.item() / masked_denominator(mask);
                    let two = T::of(2.0);
                    let mut dmu = Tensor2::zeros(mv.rows(), mv.cols());
                    let mut dsig = Tensor2::zeros(mv.rows(), mv.cols());
                    for r in 0..mv.rows() {
                        let w = mask[r] * scale;
                        if w == T::zero() {
                            continue;
                        }
                        for c in 0..mv.cols() {
                            let (mt, st) = (mv.get(r, c), sv.get(r, c));
                            let (ms, ss) = (expert_mu.get(r, c), expert_sigma.get(r, c));
                            let ss2 = ss * ss;
                            let dm = (mt - ms) / ss2 + two * *lambda * (mt - ms);
                            let ds = -T::one() / st + st / ss2 + two * *lambda * *alpha * (st.ln() - ss.ln()) / st;
                            dmu.set(r, c, w * dm);
                            dsig.set(r, c, w * ds);
                        }
                    }
                    acc(&mut grads, *mu, dmu);
                    acc(&mut grads, *sigma, dsig);
                }
                Op::Surrogate {
                    mu,
                    sigma,
                    batch,
                    ratios,
                    eps,
                    entropy_coef,
                } => {
                    let (mv, sv) = (self.val(*mu), self.val(*sigma));
                    let scale = g.item() / masked_denominator(&batch.mask);
                    let (lo, hi) = (T::one() - *eps, T::one() + *eps);
                    let mut dmu = Tensor2::zeros(mv.rows(), mv.cols());
                    let mut dsig = Tensor2::zeros(mv.rows(), mv.cols());
                    for r in 0..mv.rows() {
                        let w = batch.mask[r] * scale;
                        if w == T::zero() {
                            continue;
                        }
                        let (ratio, adv) = (ratios[r], batch.advantages[r]);
                        let unclipped = ratio * adv <= ratio.max(lo).min(hi) * adv;
                        // ∂(−surr)/∂logp
                        let dlogp = if unclipped { -adv * ratio } else { T::zero() };
                        for c in 0..mv.cols() {
                            let (m, s, a) = (mv.get(r, c), sv.get(r, c), batch.actions.get(r, c));
                            let z = a - m;
                            let dlp_dmu = z / (s * s);
                            let dlp_ds = -T::one() / s + z * z / (s * s * s);
                            dmu.set(r, c, w * dlogp * dlp_dmu);
                            dsig.set(r, c, w * (dlogp * dlp_ds - *entropy_coef / s));
                        }
                    }
                    acc(&mut grads, *mu, dmu);
                    acc(&mut grads, *sigma, dsig);
                }
                Op::Mse { pred, target, mask } => {
                    let pv = self.val(*pred);
                    let cols = T::of(pv.cols().max(1) as f64);
                    let scale = g.item() / masked_denominator(mask);
                    let mut dp = Tensor2::zeros(pv.rows(), pv.cols());
                    for r in 0..pv.rows() {
                        let w = mask[r] * scale * T::of(2.0) / cols;
                        for c in 0..pv.cols() {
                            dp.set(r, c, w * (pv.get(r, c) - target.get(r, c)));
                        }
                    }
                    acc(&mut grads, *pred, dp);
                }
            }
        }
        Ok(out)
    }
}
