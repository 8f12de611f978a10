use std::collections::BTreeMap;

use super::{Connectome, NtType};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Polarity assigned to synapses whose transmitter is not annotated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownPolarity {
    #[default]
    Excitatory,
    Inhibitory,
    /// Untyped synapses contribute nothing.
    Silent,
}

impl UnknownPolarity {
    fn sign(self, nt: NtType) -> i64 {
        if nt.is_excitatory() {
            1
        } else if nt.is_inhibitory() {
            -1
        } else {
            match self {
                UnknownPolarity::Excitatory => 1,
                UnknownPolarity::Inhibitory => -1,
                UnknownPolarity::Silent => 0,
            }
        }
    }
}

impl std::str::FromStr for UnknownPolarity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "excitatory" => Ok(UnknownPolarity::Excitatory),
            "inhibitory" => Ok(UnknownPolarity::Inhibitory),
            "silent" => Ok(UnknownPolarity::Silent),
            other => Err(format!("unknown polarity {other:?} (expected excitatory|inhibitory|silent)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Csr<T> {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> Csr<T> {
    fn transpose(&self, n: usize) -> Csr<T> {
        let mut counts = vec![0usize; n + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.indices.len()];
        let mut values = vec![T::zero(); self.values.len()];
        for r in 0..n {
            for k in self.offsets[r]..self.offsets[r + 1] {
                let c = self.indices[k];
                let slot = next[c];
                indices[slot] = r;
                values[slot] = self.values[k];
                next[c] += 1;
            }
        }
        Csr { offsets, indices, values }
    }
}

/// Square sparse matrix `W` in CSR form, row = postsynaptic neuron.
///
/// Entry `(v, u)` is the net polarized count from `u` onto `v`. The transposed
/// layout used by backward propagation is built once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedOperator<T> {
    n: usize,
    fwd: Csr<T>,
    bwd: Csr<T>,
}

impl<T: Scalar> SignedOperator<T> {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, T)>) -> Result<Self> {
        let mut acc: BTreeMap<(usize, usize), T> = BTreeMap::new();
        for (r, c, v) in triplets {
            if r >= n || c >= n {
                return Err(Error::shape(format!("entry ({r},{c}) outside {n}x{n}")));
            }
            let slot = acc.entry((r, c)).or_insert_with(T::zero);
            *slot = *slot + v;
        }
        let mut offsets = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(acc.len());
        let mut values = Vec::with_capacity(acc.len());
        for ((r, c), v) in acc {
            offsets[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Ok(Self::from_csr(n, Csr { offsets, indices, values }))
    }

    /// Validates raw CSR arrays, e.g. from an operator cache file.
    pub fn from_csr_parts(n: usize, offsets: Vec<usize>, indices: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if offsets.len() != n + 1 || offsets[0] != 0 || *offsets.last().unwrap_or(&1) != indices.len() {
            return Err(Error::shape("row offsets inconsistent with index array"));
        }
        if indices.len() != values.len() {
            return Err(Error::shape("index and value arrays differ in length"));
        }
        for r in 0..n {
            if offsets[r] > offsets[r + 1] {
                return Err(Error::shape(format!("row offsets decrease at row {r}")));
            }
            let row = &indices[offsets[r]..offsets[r + 1]];
            if row.iter().any(|&c| c >= n) || row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::shape(format!("row {r} has out-of-range or unsorted columns")));
            }
        }
        Ok(Self::from_csr(n, Csr { offsets, indices, values }))
    }

    fn from_csr(n: usize, fwd: Csr<T>) -> Self {
        let bwd = fwd.transpose(n);
        SignedOperator { n, fwd, bwd }
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_csr(
            n,
            Csr {
                offsets: vec![0; n + 1],
                indices: Vec::new(),
                values: Vec::new(),
            },
        )
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, T::one()))).expect("diagonal is in range")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.fwd.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.fwd.offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.fwd.indices
    }

    pub fn values(&self) -> &[T] {
        &self.fwd.values
    }

    /// Column indices and values of row `v`.
    #[inline]
    pub fn row(&self, v: usize) -> (&[usize], &[T]) {
        let r = self.fwd.offsets[v]..self.fwd.offsets[v + 1];
        (&self.fwd.indices[r.clone()], &self.fwd.values[r])
    }

    /// Row `u` of the transpose, i.e. the outgoing weights of neuron `u`.
    #[inline]
    pub fn transposed_row(&self, u: usize) -> (&[usize], &[T]) {
        let r = self.bwd.offsets[u]..self.bwd.offsets[u + 1];
        (&self.bwd.indices[r.clone()], &self.bwd.values[r])
    }

    pub fn get(&self, v: usize, u: usize) -> T {
        let (cols, vals) = self.row(v);
        cols.binary_search(&u).map_or(T::zero(), |k| vals[k])
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.n * self.n];
        for v in 0..self.n {
            let (cols, vals) = self.row(v);
            for (&u, &w) in cols.iter().zip(vals) {
                out[v * self.n + u] = w;
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> SignedOperator<U> {
        let conv = |c: &Csr<T>| Csr {
            offsets: c.offsets.clone(),
            indices: c.indices.clone(),
            values: c.values.iter().map(|v| U::of(v.as_f64())).collect(),
        };
        SignedOperator {
            n: self.n,
            fwd: conv(&self.fwd),
            bwd: conv(&self.bwd),
        }
    }
}

/// Net polarized synaptic counts: `W[v][u] = N_exc(u,v) - N_inh(u,v)`.
///
/// A synapse's transmitter is its edge override when present, else the
/// presynaptic neuron's type. Pairs whose counts cancel keep an explicit zero
/// entry so the sparsity pattern always matches the set of connected pairs.
pub fn build_signed_operator<T: Scalar>(c: &Connectome, unknown: UnknownPolarity) -> SignedOperator<T> {
    let mut net: BTreeMap<(usize, usize), i64> = BTreeMap::new();
    for e in c.edges() {
        let sign = unknown.sign(c.effective_nt(e));
        *net.entry((e.post, e.pre)).or_insert(0) += sign * e.syn_count as i64;
    }
    SignedOperator::from_triplets(c.len(), net.into_iter().map(|((v, u), w)| (v, u, T::of(w as f64)))).expect("connectome edges are validated")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectome::fixtures::*;
    use crate::connectome::{FlowClass, SynapseEdge};

    fn pair(pre_nt: NtType, edges: Vec<SynapseEdge>) -> Connectome {
        Connectome::new(vec![neuron(0, FlowClass::Afferent, pre_nt), neuron(1, FlowClass::Efferent, NtType::Ach)], edges).unwrap()
    }

    #[test]
    fn excitatory_minus_inhibitory() {
        let mut inh = edge(0, 1, 2);
        inh.nt_override = Some(NtType::Gaba);
        let w = build_signed_operator::<f64>(&pair(NtType::Ach, vec![edge(0, 1, 5), inh]), UnknownPolarity::Excitatory);
        assert_eq!(w.get(1, 0), 3.0);
        assert_eq!(w.nnz(), 1);
    }

    #[test]
    fn glycinergic_presynapse_is_negative() {
        let w = build_signed_operator::<f64>(&pair(NtType::Gly, vec![edge(0, 1, 4)]), UnknownPolarity::Excitatory);
        assert_eq!(w.get(1, 0), -4.0);
    }

    #[test]
    fn unknown_polarity_follows_policy() {
        let c = pair(NtType::Unknown, vec![edge(0, 1, 4)]);
        assert_eq!(build_signed_operator::<f64>(&c, UnknownPolarity::Excitatory).get(1, 0), 4.0);
        assert_eq!(build_signed_operator::<f64>(&c, UnknownPolarity::Inhibitory).get(1, 0), -4.0);
        assert_eq!(build_signed_operator::<f64>(&c, UnknownPolarity::Silent).get(1, 0), 0.0);
    }

    #[test]
    fn chain_matches_hand_written_matrix() {
        let w = build_signed_operator::<f64>(&chain(), UnknownPolarity::Excitatory);
        assert_eq!(w.nnz(), 2);
        #[rustfmt::skip]
        let expect = [
            0.0, 0.0, 0.0,
            2.0, 0.0, 0.0,
            0.0, 7.0, 0.0,
        ];
        assert_eq!(w.to_dense(), expect);
    }

    #[test]
    fn transpose_view_matches_forward() {
        let w = SignedOperator::<f64>::from_triplets(4, [(0, 1, 1.0), (2, 1, -3.0), (3, 0, 2.0), (3, 3, 5.0)]).unwrap();
        let (cols, vals) = w.transposed_row(1);
        assert_eq!(cols, &[0, 2]);
        assert_eq!(vals, &[1.0, -3.0]);
        for u in 0..4 {
            let (rows, vals) = w.transposed_row(u);
            for (&v, &x) in rows.iter().zip(vals) {
                assert_eq!(w.get(v, u), x);
            }
        }
    }

    #[test]
    fn csr_parts_are_validated() {
        assert!(SignedOperator::<f64>::from_csr_parts(2, vec![0, 2, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(SignedOperator::<f64>::from_csr_parts(2, vec![0, 1, 2], vec![1, 0], vec![1.0, 1.0]).is_ok());
    }
}
