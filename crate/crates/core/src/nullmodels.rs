//! Baseline topologies: Erdős–Rényi graphs with matched size, degree-preserving
//! rewiring, and the unit-weight operator used for topology comparisons.

use std::collections::HashSet;

use log::warn;
use rand::prelude::*;
use rand::seq::index;
use rand_chacha::ChaCha8Rng;

use crate::connectome::{Connectome, SignedOperator};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct RewireConfig {
    pub swaps_per_edge: f64,
    pub seed: u64,
    pub max_attempts_factor: usize,
}

impl Default for RewireConfig {
    fn default() -> Self {
        RewireConfig {
            swaps_per_edge: 10.0,
            seed: 0,
            max_attempts_factor: 100,
        }
    }
}

/// One accepted double-edge swap: slots `i` and `j` held `before` and now
/// hold `(before.0.0, before.1.1)` and `(before.1.0, before.0.1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Swap {
    pub i: usize,
    pub j: usize,
    pub before: ((usize, usize), (usize, usize)),
}

#[derive(Debug, Clone)]
pub struct RewireOutcome {
    pub connectome: Connectome,
    pub accepted: usize,
    pub target: usize,
    pub attempts: usize,
    /// Set when fewer swaps than requested could be accepted.
    pub warning: Option<String>,
    /// Swappable (non-loop) edges in slot order before rewiring.
    pub initial_slots: Vec<(usize, usize)>,
    pub log: Vec<Swap>,
}

/// Same neurons and edge count, pairs drawn uniformly without replacement from
/// all ordered pairs `u != v`. Edges carry unit counts and no transmitter.
pub fn erdos_renyi_like(c: &Connectome, seed: u64) -> Result<Connectome> {
    let n = c.len();
    let m = c.pair_count();
    if n < 2 {
        return c.with_pairs(std::iter::empty());
    }
    let capacity = n * (n - 1);
    if m > capacity {
        return Err(Error::invalid("edge count exceeds simple-digraph capacity"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, capacity, m);
    let pairs = picks.into_iter().map(|k| {
        let u = k / (n - 1);
        let r = k % (n - 1);
        (u, if r >= u { r + 1 } else { r })
    });
    c.with_pairs(pairs)
}

/// Directed double-edge swaps `(a→b),(c→d) → (a→d),(c→b)` preserving every
/// in- and out-degree. Self-loops are frozen and carried over untouched.
pub fn degree_preserving_rewire(c: &Connectome, cfg: &RewireConfig) -> Result<RewireOutcome> {
    if !(cfg.swaps_per_edge > 0.0) {
        return Err(Error::invalid("swaps_per_edge must be > 0"));
    }
    let all = c.pairs();
    let loops: Vec<(usize, usize)> = all.iter().copied().filter(|(u, v)| u == v).collect();
    let mut slots: Vec<(usize, usize)> = all.iter().copied().filter(|(u, v)| u != v).collect();
    let initial_slots = slots.clone();
    let mut present: HashSet<(usize, usize)> = slots.iter().copied().collect();

    let target = (cfg.swaps_per_edge * slots.len() as f64).ceil() as usize;
    let max_attempts = cfg.max_attempts_factor.saturating_mul(target);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(target);
    let mut attempts = 0usize;

    if slots.len() >= 2 {
        while log.len() < target && attempts < max_attempts {
            attempts += 1;
            let i = rng.random_range(0..slots.len());
            let j = rng.random_range(0..slots.len());
            if i == j {
                continue;
            }
            let (a, b) = slots[i];
            let (cc, d) = slots[j];
            let (e1, e2) = ((a, d), (cc, b));
            if a == d || cc == b || present.contains(&e1) || present.contains(&e2) {
                continue;
            }
            present.remove(&(a, b));
            present.remove(&(cc, d));
            present.insert(e1);
            present.insert(e2);
            slots[i] = e1;
            slots[j] = e2;
            log.push(Swap {
                i,
                j,
                before: ((a, b), (cc, d)),
            });
        }
    }

    let warning = (log.len() < target).then(|| {
        let msg = format!(
            "degree-preserving rewire accepted {} of {} swaps after {} attempts",
            log.len(),
            target,
            attempts
        );
        warn!("{msg}");
        msg
    });
    let connectome = c.with_pairs(slots.iter().copied().chain(loops))?;
    Ok(RewireOutcome {
        connectome,
        accepted: log.len(),
        target,
        attempts,
        warning,
        initial_slots,
        log,
    })
}

/// Replays a swap log backwards over the final slot list, recovering the
/// original slots.
pub fn undo_swaps(final_slots: &[(usize, usize)], log: &[Swap]) -> Vec<(usize, usize)> {
    let mut slots = final_slots.to_vec();
    for s in log.iter().rev() {
        slots[s.i] = s.before.0;
        slots[s.j] = s.before.1;
    }
    slots
}

/// Replays a swap log forwards from the initial slot list.
pub fn apply_swaps(initial_slots: &[(usize, usize)], log: &[Swap]) -> Vec<(usize, usize)> {
    let mut slots = initial_slots.to_vec();
    for s in log {
        let ((a, b), (c, d)) = s.before;
        debug_assert_eq!(slots[s.i], (a, b));
        debug_assert_eq!(slots[s.j], (c, d));
        slots[s.i] = (a, d);
        slots[s.j] = (c, b);
    }
    slots
}

/// `+1` at every connected pair, regardless of counts or transmitters.
pub fn unit_weights<T: Scalar>(c: &Connectome) -> SignedOperator<T> {
    SignedOperator::from_triplets(c.len(), c.pairs().into_iter().map(|(pre, post)| (post, pre, T::one()))).expect("connectome edges are validated")
}

/// Jaccard overlap of two edge sets.
pub fn jaccard(a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
    let sa: HashSet<_> = a.iter().collect();
    let sb: HashSet<_> = b.iter().collect();
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectome::fixtures::*;
    use crate::connectome::{synth_connectome, FlowClass, NtType, SynthSpec};

    fn two_node(pairs: &[(usize, usize)]) -> Connectome {
        Connectome::new(
            vec![neuron(0, FlowClass::Afferent, NtType::Ach), neuron(1, FlowClass::Efferent, NtType::Ach)],
            pairs.iter().map(|&(u, v)| edge(u, v, 3)).collect(),
        )
        .unwrap()
    }

    fn synth(n_edges: usize, seed: u64) -> Connectome {
        synth_connectome(&SynthSpec {
            n_afferent: 10,
            n_intrinsic: 80,
            n_efferent: 10,
            n_edges,
            seed,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn er_capacity_forced_case() {
        let c = two_node(&[(0, 1), (1, 0)]);
        let er = erdos_renyi_like(&c, 5).unwrap();
        assert_eq!(er.pairs(), vec![(0, 1), (1, 0)]);
        assert!(er.edges().iter().all(|e| e.syn_count == 1 && e.nt_override.is_none()));
    }

    #[test]
    fn er_matches_size_and_is_simple() {
        let c = synth(500, 1);
        let er = erdos_renyi_like(&c, 1).unwrap();
        assert_eq!(er.len(), 100);
        assert_eq!(er.pair_count(), 500);
        assert_eq!(er.edges().len(), 500);
        assert!(er.pairs().iter().all(|(u, v)| u != v));
        assert_eq!(er.partition(), c.partition());
        let other = erdos_renyi_like(&c, 2).unwrap();
        assert_ne!(er.pairs(), other.pairs());
    }

    #[test]
    fn two_cycle_admits_no_swap() {
        let c = two_node(&[(0, 1), (1, 0)]);
        let out = degree_preserving_rewire(
            &c,
            &RewireConfig {
                seed: 3,
                max_attempts_factor: 5,
                ..RewireConfig::default()
            },
        )
        .unwrap();
        assert_eq!(out.accepted, 0);
        assert!(out.warning.is_some());
        assert_eq!(out.connectome.pairs(), c.pairs());
    }

    #[test]
    fn rewire_preserves_degrees_and_freezes_loops() {
        let base = synth(600, 4);
        let mut pairs = base.pairs();
        pairs.push((5, 5));
        let c = base.with_pairs(pairs).unwrap();
        let out = degree_preserving_rewire(
            &c,
            &RewireConfig {
                seed: 9,
                ..RewireConfig::default()
            },
        )
        .unwrap();
        assert_eq!(out.connectome.degrees(), c.degrees());
        assert!(out.connectome.pairs().contains(&(5, 5)));
        assert_eq!(out.connectome.pair_count(), c.pair_count());
        assert_eq!(out.accepted, out.target);
        assert!(jaccard(&c.pairs(), &out.connectome.pairs()) < 0.5);
    }

    #[test]
    fn swap_log_inverts() {
        let c = synth(400, 2);
        let out = degree_preserving_rewire(
            &c,
            &RewireConfig {
                swaps_per_edge: 2.0,
                seed: 1,
                ..RewireConfig::default()
            },
        )
        .unwrap();
        let fwd = apply_swaps(&out.initial_slots, &out.log);
        let mut sorted = fwd.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, out.connectome.pairs());
        assert_eq!(undo_swaps(&fwd, &out.log), out.initial_slots);
    }

    #[test]
    fn unit_weight_operator() {
        let mut inh = edge(0, 1, 7);
        inh.nt_override = Some(NtType::Gaba);
        let c = Connectome::new(
            vec![neuron(0, FlowClass::Afferent, NtType::Ach), neuron(1, FlowClass::Efferent, NtType::Ach)],
            vec![inh],
        )
        .unwrap();
        let w = unit_weights::<f64>(&c);
        assert_eq!(w.get(1, 0), 1.0);

        let empty = c.with_pairs(std::iter::empty()).unwrap();
        let z = unit_weights::<f64>(&empty);
        assert_eq!((z.dim(), z.nnz()), (2, 0));

        let w = unit_weights::<f64>(&chain());
        assert_eq!(w.to_dense(), vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }
}
