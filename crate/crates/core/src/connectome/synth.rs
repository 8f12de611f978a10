//! Seeded block-modular connectome generator used in place of FlyWire data.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Geometric;

use super::{Connectome, FlowClass, Neuron, NtType, SynapseEdge};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_afferent: usize,
    pub n_intrinsic: usize,
    pub n_efferent: usize,
    pub n_edges: usize,
    /// Fraction of edges whose endpoints share a block.
    pub modularity: f64,
    pub n_blocks: usize,
    pub nt_mix: Vec<(NtType, f64)>,
    /// Mean synapse count per edge (counts are `1 + Geometric`).
    pub mean_syn_count: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_afferent: 40,
            n_intrinsic: 220,
            n_efferent: 40,
            n_edges: 3000,
            modularity: 0.8,
            n_blocks: 6,
            nt_mix: vec![
                (NtType::Ach, 0.55),
                (NtType::Glu, 0.15),
                (NtType::Gaba, 0.2),
                (NtType::Gly, 0.04),
                (NtType::His, 0.02),
                (NtType::Asp, 0.01),
                (NtType::Unknown, 0.03),
            ],
            mean_syn_count: 3.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn n_neurons(&self) -> usize {
        self.n_afferent + self.n_intrinsic + self.n_efferent
    }

    fn validate(&self) -> Result<()> {
        if self.n_afferent == 0 || self.n_intrinsic == 0 || self.n_efferent == 0 || self.n_blocks == 0 {
            return Err(Error::invalid("synthetic spec counts must be >= 1"));
        }
        let n = self.n_neurons();
        if self.n_edges > n * n - n {
            return Err(Error::invalid("edge budget exceeds simple-digraph capacity"));
        }
        if self.n_edges < self.n_afferent + self.n_efferent {
            return Err(Error::invalid(
                "edge budget too small to give every afferent an output and every efferent an input",
            ));
        }
        if !(0.0..=1.0).contains(&self.modularity) {
            return Err(Error::invalid("modularity must lie in [0, 1]"));
        }
        if self.mean_syn_count < 1.0 {
            return Err(Error::invalid("mean_syn_count must be >= 1"));
        }
        if self.nt_mix.is_empty() || self.nt_mix.iter().any(|(_, w)| !(*w >= 0.0)) {
            return Err(Error::invalid("nt_mix must be a non-empty set of non-negative weights"));
        }
        Ok(())
    }
}

const AFFERENT_CLASSES: [&str; 2] = ["sensory", "ascending"];
const INTRINSIC_CLASSES: [&str; 4] = ["central", "optic", "visual_projection", "visual_centrifugal"];
const EFFERENT_CLASSES: [&str; 3] = ["motor", "descending", "endocrine"];

struct Wiring<'a> {
    spec: &'a SynthSpec,
    block_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    taken: HashSet<(usize, usize)>,
    pairs: Vec<(usize, usize)>,
}

impl Wiring<'_> {
    /// Picks a partner for `anchor` honoring the modularity mass.
    fn partner(&self, rng: &mut ChaCha8Rng, anchor: usize) -> usize {
        let n = self.block_of.len();
        let b = self.block_of[anchor];
        let within = self.spec.n_blocks == 1 || rng.random::<f64>() < self.spec.modularity;
        if within {
            let pool = &self.members[b];
            pool[rng.random_range(0..pool.len())]
        } else {
            loop {
                let v = rng.random_range(0..n);
                if self.block_of[v] != b {
                    return v;
                }
            }
        }
    }

    fn try_add(&mut self, pre: usize, post: usize) -> bool {
        if pre != post && self.taken.insert((pre, post)) {
            self.pairs.push((pre, post));
            true
        } else {
            false
        }
    }
}

pub fn synth_connectome(spec: &SynthSpec) -> Result<Connectome> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_neurons();

    let nt_dist = WeightedIndex::new(spec.nt_mix.iter().map(|(_, w)| *w)).map_err(|e| Error::invalid(format!("nt_mix: {e}")))?;
    let mut neurons = Vec::with_capacity(n);
    let mut block_of = Vec::with_capacity(n);
    let groups = [
        (FlowClass::Afferent, spec.n_afferent, &AFFERENT_CLASSES[..]),
        (FlowClass::Intrinsic, spec.n_intrinsic, &INTRINSIC_CLASSES[..]),
        (FlowClass::Efferent, spec.n_efferent, &EFFERENT_CLASSES[..]),
    ];
    for (flow, count, labels) in groups {
        for i in 0..count {
            let id = neurons.len();
            let block = i % spec.n_blocks;
            // Skew labels so the first class of each flow type dominates.
            let label = if rng.random::<f64>() < 0.6 {
                labels[0]
            } else {
                labels[rng.random_range(0..labels.len())]
            };
            neurons.push(Neuron {
                id,
                source_id: id as u64,
                flow_class: flow,
                superclass: label.to_string(),
                nt_type: spec.nt_mix[nt_dist.sample(&mut rng)].0,
            });
            block_of.push(block);
        }
    }
    let mut members = vec![Vec::new(); spec.n_blocks];
    for (v, &b) in block_of.iter().enumerate() {
        members[b].push(v);
    }

    let mut w = Wiring {
        spec,
        block_of,
        members,
        taken: HashSet::with_capacity(spec.n_edges),
        pairs: Vec::with_capacity(spec.n_edges),
    };
    let attempt_cap = 64 * n.max(16);

    // Every afferent needs an outgoing edge and every efferent an incoming one.
    let aff: Vec<usize> = (0..spec.n_afferent).collect();
    let eff: Vec<usize> = (n - spec.n_efferent..n).collect();
    for &a in &aff {
        let mut tries = 0;
        while !(w.try_add(a, w.partner(&mut rng, a))) {
            tries += 1;
            if tries > attempt_cap {
                let post = (a + 1) % n;
                w.try_add(a, post);
                break;
            }
        }
    }
    for &e in &eff {
        if w.pairs.iter().any(|&(_, post)| post == e) {
            continue;
        }
        let mut tries = 0;
        while !(w.try_add(w.partner(&mut rng, e), e)) {
            tries += 1;
            if tries > attempt_cap {
                let pre = (e + n - 1) % n;
                w.try_add(pre, e);
                break;
            }
        }
    }

    let mut misses = 0usize;
    while w.pairs.len() < spec.n_edges && misses < attempt_cap * 4 {
        let pre = rng.random_range(0..n);
        let post = w.partner(&mut rng, pre);
        if !w.try_add(pre, post) {
            misses += 1;
        }
    }
    if w.pairs.len() < spec.n_edges {
        // Dense budgets: finish from the explicit list of free pairs.
        let mut free: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (0..n).map(move |v| (u, v)))
            .filter(|&(u, v)| u != v && !w.taken.contains(&(u, v)))
            .collect();
        free.shuffle(&mut rng);
        let need = spec.n_edges - w.pairs.len();
        for (u, v) in free.into_iter().take(need) {
            w.try_add(u, v);
        }
    }

    let extra = Geometric::new(1.0 / spec.mean_syn_count).map_err(|e| Error::invalid(format!("mean_syn_count: {e}")))?;
    let mut pairs = w.pairs;
    pairs.sort_unstable();
    let edges = pairs
        .into_iter()
        .map(|(pre, post)| SynapseEdge {
            pre,
            post,
            syn_count: 1 + extra.sample(&mut rng),
            nt_override: None,
        })
        .collect();
    Connectome::new(neurons, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            n_afferent: 10,
            n_intrinsic: 80,
            n_efferent: 10,
            n_edges: 800,
            modularity: 0.8,
            n_blocks: 4,
            seed: 7,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_connectome(&small()).unwrap();
        let b = synth_connectome(&small()).unwrap();
        assert_eq!(a, b);
        let mut other = small();
        other.seed = 8;
        assert_ne!(synth_connectome(&other).unwrap(), a);
    }

    #[test]
    fn simple_graph_with_exact_budget_and_flow_constraints() {
        let c = synth_connectome(&small()).unwrap();
        let pairs = c.pairs();
        assert_eq!(pairs.len(), 800);
        assert_eq!(c.edges().len(), 800);
        assert!(pairs.iter().all(|(u, v)| u != v));
        let (out, inn) = c.degrees();
        for &a in &c.partition().afferent {
            assert!(out[a] >= 1);
        }
        for &e in &c.partition().efferent {
            assert!(inn[e] >= 1);
        }
        assert_eq!(c.partition().sizes(), (10, 80, 10));
    }

    #[test]
    fn within_block_mass_tracks_modularity() {
        let c = synth_connectome(&small()).unwrap();
        // Blocks are assigned round-robin inside each flow class.
        let block = |v: usize| {
            let (a, i) = (10, 80);
            if v < a {
                v % 4
            } else if v < a + i {
                (v - a) % 4
            } else {
                (v - a - i) % 4
            }
        };
        let within = c.pairs().iter().filter(|(u, v)| block(*u) == block(*v)).count();
        let frac = within as f64 / 800.0;
        assert!((frac - 0.8).abs() < 0.06, "within-block fraction {frac}");
    }

    #[test]
    fn single_block_is_unconstrained() {
        let spec = SynthSpec {
            modularity: 1.0,
            n_blocks: 1,
            ..small()
        };
        let c = synth_connectome(&spec).unwrap();
        assert_eq!(c.pair_count(), 800);
    }

    #[test]
    fn over_budget_is_rejected() {
        let spec = SynthSpec { n_edges: 100 * 100, ..small() };
        let err = synth_connectome(&spec).unwrap_err();
        assert!(err.to_string().contains("edge budget exceeds simple-digraph capacity"));
    }

    #[test]
    fn dense_budget_completes() {
        let spec = SynthSpec {
            n_afferent: 2,
            n_intrinsic: 4,
            n_efferent: 2,
            n_edges: 56,
            n_blocks: 2,
            ..small()
        };
        let c = synth_connectome(&spec).unwrap();
        assert_eq!(c.pair_count(), 56);
    }
}
