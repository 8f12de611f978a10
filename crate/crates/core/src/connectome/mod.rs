//! Neuron tables, aggregated synapse edges and the flow-type partition.
//!
//! A [`Connectome`] is immutable once built. Neuron ids are dense
//! (`0..n`) and ordered by ascending source id, so the same input files always
//! yield the same graph regardless of row order.

mod operator;
mod parse;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub use operator::{build_signed_operator, SignedOperator, UnknownPolarity};
pub use parse::{parse_connectome, parse_connectome_from, read_connectome_dir, write_connectome, write_connectome_dir};
pub use synth::{synth_connectome, SynthSpec};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FlowClass {
    Afferent,
    Intrinsic,
    Efferent,
}

impl FlowClass {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowClass::Afferent => "afferent",
            FlowClass::Intrinsic => "intrinsic",
            FlowClass::Efferent => "efferent",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FlowClass::Afferent),
            1 => Some(FlowClass::Intrinsic),
            2 => Some(FlowClass::Efferent),
            _ => None,
        }
    }
}

impl FromStr for FlowClass {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "afferent" => Ok(FlowClass::Afferent),
            "intrinsic" => Ok(FlowClass::Intrinsic),
            "efferent" => Ok(FlowClass::Efferent),
            _ => Err(()),
        }
    }
}

impl fmt::Display for FlowClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Neurotransmitter annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NtType {
    Ach,
    Glu,
    Asp,
    His,
    Gaba,
    Gly,
    Unknown,
}

impl NtType {
    pub const ALL: [NtType; 7] = [NtType::Ach, NtType::Glu, NtType::Asp, NtType::His, NtType::Gaba, NtType::Gly, NtType::Unknown];

    pub fn as_str(self) -> &'static str {
        match self {
            NtType::Ach => "ACH",
            NtType::Glu => "GLU",
            NtType::Asp => "ASP",
            NtType::His => "HIS",
            NtType::Gaba => "GABA",
            NtType::Gly => "GLY",
            NtType::Unknown => "UNKNOWN",
        }
    }

    /// Transmitter label as found in source tables. Modulatory or missing
    /// annotations (DA, SER, OCT, empty) collapse to `Unknown`.
    pub fn parse_lenient(s: &str) -> NtType {
        match s.trim().to_ascii_uppercase().as_str() {
            "ACH" => NtType::Ach,
            "GLU" => NtType::Glu,
            "ASP" => NtType::Asp,
            "HIS" => NtType::His,
            "GABA" => NtType::Gaba,
            "GLY" => NtType::Gly,
            _ => NtType::Unknown,
        }
    }

    pub fn is_excitatory(self) -> bool {
        matches!(self, NtType::Ach | NtType::Glu | NtType::Asp | NtType::His)
    }

    pub fn is_inhibitory(self) -> bool {
        matches!(self, NtType::Gaba | NtType::Gly)
    }
}

impl fmt::Display for NtType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neuron {
    pub id: usize,
    /// Identifier in the source table, before dense remapping.
    pub source_id: u64,
    pub flow_class: FlowClass,
    pub superclass: String,
    pub nt_type: NtType,
}

/// Aggregated synapses from `pre` to `post` sharing one effective transmitter.
///
/// `nt_override` is only kept when it differs from the presynaptic neuron's
/// own type, so two edges with the same effective transmitter always merge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynapseEdge {
    pub pre: usize,
    pub post: usize,
    pub syn_count: u64,
    pub nt_override: Option<NtType>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    pub afferent: Vec<usize>,
    pub intrinsic: Vec<usize>,
    pub efferent: Vec<usize>,
}

impl Partition {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.afferent.len(), self.intrinsic.len(), self.efferent.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connectome {
    neurons: Vec<Neuron>,
    edges: Vec<SynapseEdge>,
    partition: Partition,
}

impl Connectome {
    /// Validates, merges duplicate edges and derives the partition.
    ///
    /// Neurons must already carry dense ids `0..n` in order.
    pub fn new(neurons: Vec<Neuron>, edges: Vec<SynapseEdge>) -> Result<Self> {
        for (i, n) in neurons.iter().enumerate() {
            if n.id != i {
                return Err(Error::invalid(format!("neuron ids must be dense: found id {} at position {i}", n.id)));
            }
        }
        let n = neurons.len();
        let mut merged: BTreeMap<(usize, usize, NtType), u64> = BTreeMap::new();
        for e in &edges {
            if e.pre >= n || e.post >= n {
                return Err(Error::invalid(format!("edge {}->{} references a missing neuron", e.pre, e.post)));
            }
            if e.syn_count == 0 {
                return Err(Error::invalid(format!("edge {}->{} has zero synapses", e.pre, e.post)));
            }
            let nt = e.nt_override.unwrap_or(neurons[e.pre].nt_type);
            *merged.entry((e.pre, e.post, nt)).or_insert(0) += e.syn_count;
        }
        let edges = merged
            .into_iter()
            .map(|((pre, post, nt), syn_count)| SynapseEdge {
                pre,
                post,
                syn_count,
                nt_override: (nt != neurons[pre].nt_type).then_some(nt),
            })
            .collect();

        let mut partition = Partition::default();
        for nrn in &neurons {
            match nrn.flow_class {
                FlowClass::Afferent => partition.afferent.push(nrn.id),
                FlowClass::Intrinsic => partition.intrinsic.push(nrn.id),
                FlowClass::Efferent => partition.efferent.push(nrn.id),
            }
        }
        Ok(Connectome { neurons, edges, partition })
    }

    pub fn neurons(&self) -> &[Neuron] {
        &self.neurons
    }

    /// Edges sorted by `(pre, post, effective transmitter)`.
    pub fn edges(&self) -> &[SynapseEdge] {
        &self.edges
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    pub fn effective_nt(&self, e: &SynapseEdge) -> NtType {
        e.nt_override.unwrap_or(self.neurons[e.pre].nt_type)
    }

    /// Distinct ordered `(pre, post)` pairs, sorted.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<_> = self.edges.iter().map(|e| (e.pre, e.post)).collect();
        pairs.dedup();
        pairs
    }

    pub fn pair_count(&self) -> usize {
        self.pairs().len()
    }

    /// Out-degree and in-degree per neuron, counted over distinct pairs.
    pub fn degrees(&self) -> (Vec<usize>, Vec<usize>) {
        let mut out = vec![0; self.len()];
        let mut inn = vec![0; self.len()];
        for (pre, post) in self.pairs() {
            out[pre] += 1;
            inn[post] += 1;
        }
        (out, inn)
    }

    /// Same neurons, new unit-count edges with no transmitter override.
    pub fn with_pairs(&self, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Connectome> {
        let edges = pairs
            .into_iter()
            .map(|(pre, post)| SynapseEdge {
                pre,
                post,
                syn_count: 1,
                nt_override: None,
            })
            .collect();
        Connectome::new(self.neurons.clone(), edges)
    }

    pub fn superclass_labels(&self) -> Vec<String> {
        self.neurons.iter().map(|n| n.superclass.clone()).collect()
    }

    pub fn flow_classes(&self) -> Vec<FlowClass> {
        self.neurons.iter().map(|n| n.flow_class).collect()
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn neuron(id: usize, flow: FlowClass, nt: NtType) -> Neuron {
        Neuron {
            id,
            source_id: id as u64,
            flow_class: flow,
            superclass: flow.as_str().to_string(),
            nt_type: nt,
        }
    }

    pub fn edge(pre: usize, post: usize, count: u64) -> SynapseEdge {
        SynapseEdge {
            pre,
            post,
            syn_count: count,
            nt_override: None,
        }
    }

    /// a -> b -> c, all ACH, counts 2 and 7.
    pub fn chain() -> Connectome {
        Connectome::new(
            vec![
                neuron(0, FlowClass::Afferent, NtType::Ach),
                neuron(1, FlowClass::Intrinsic, NtType::Ach),
                neuron(2, FlowClass::Efferent, NtType::Ach),
            ],
            vec![edge(0, 1, 2), edge(1, 2, 7)],
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn partition_covers_all_ids() {
        let c = chain();
        assert_eq!(c.partition().sizes(), (1, 1, 1));
        assert_eq!(c.pair_count(), 2);
    }

    #[test]
    fn mixed_transmitters_keep_separate_entries_for_one_pair() {
        let mut e = edge(0, 1, 2);
        e.nt_override = Some(NtType::Gaba);
        let c = Connectome::new(
            vec![neuron(0, FlowClass::Afferent, NtType::Ach), neuron(1, FlowClass::Efferent, NtType::Ach)],
            vec![edge(0, 1, 5), e, edge(0, 1, 1)],
        )
        .unwrap();
        assert_eq!(c.edges().len(), 2);
        assert_eq!(c.edges()[0].syn_count, 6);
        assert_eq!(c.pair_count(), 1);
    }

    #[test]
    fn override_equal_to_presynaptic_type_is_normalized() {
        let mut e = edge(0, 1, 3);
        e.nt_override = Some(NtType::Ach);
        let c = Connectome::new(
            vec![neuron(0, FlowClass::Afferent, NtType::Ach), neuron(1, FlowClass::Efferent, NtType::Ach)],
            vec![edge(0, 1, 4), e],
        )
        .unwrap();
        assert_eq!(c.edges(), &[edge(0, 1, 7)]);
    }

    #[test]
    fn rejects_dangling_edges() {
        let err = Connectome::new(vec![neuron(0, FlowClass::Afferent, NtType::Ach)], vec![edge(0, 3, 1)]);
        assert!(err.is_err());
    }
}
