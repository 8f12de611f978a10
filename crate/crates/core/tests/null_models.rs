use std::collections::HashSet;

use flygm::connectome::{synth_connectome, Connectome, SynthSpec};
use flygm::nullmodels::{apply_swaps, degree_preserving_rewire, erdos_renyi_like, jaccard, undo_swaps, RewireConfig};

fn graph_500() -> Connectome {
    synth_connectome(&SynthSpec {
        n_afferent: 60,
        n_intrinsic: 380,
        n_efferent: 60,
        n_edges: 5000,
        seed: 17,
        ..SynthSpec::default()
    })
    .unwrap()
}

#[test]
fn rewiring_preserves_degrees_and_mixes() {
    let base = graph_500();
    assert_eq!((base.len(), base.pair_count()), (500, 5000));
    let degrees = base.degrees();
    for seed in 0..20 {
        let out = degree_preserving_rewire(
            &base,
            &RewireConfig {
                seed,
                ..RewireConfig::default()
            },
        )
        .unwrap();
        assert_eq!(out.connectome.degrees(), degrees, "seed {seed}");
        assert_eq!(out.connectome.partition(), base.partition());
        assert!(out.warning.is_none());
        let j = jaccard(&base.pairs(), &out.connectome.pairs());
        assert!(j < 0.5, "seed {seed}: jaccard {j}");
    }
}

#[test]
fn swap_log_inverts() {
    let base = graph_500();
    let out = degree_preserving_rewire(
        &base,
        &RewireConfig {
            seed: 3,
            swaps_per_edge: 1.0,
            ..RewireConfig::default()
        },
    )
    .unwrap();
    let mut final_slots = apply_swaps(&out.initial_slots, &out.log);
    let mut recovered = undo_swaps(&final_slots, &out.log);
    let mut initial = out.initial_slots.clone();
    recovered.sort_unstable();
    initial.sort_unstable();
    assert_eq!(recovered, initial);
    final_slots.sort_unstable();
    let mut got = out.connectome.pairs();
    got.sort_unstable();
    assert_eq!(final_slots, got);
}

#[test]
fn erdos_renyi_keeps_counts_and_is_simple() {
    let base = graph_500();
    let mut previous = None;
    for seed in 0..5 {
        let er = erdos_renyi_like(&base, seed).unwrap();
        assert_eq!(er.len(), base.len());
        assert_eq!(er.pair_count(), base.pair_count());
        assert_eq!(er.partition(), base.partition());
        let pairs = er.pairs();
        assert!(pairs.iter().all(|(u, v)| u != v));
        assert_eq!(pairs.iter().collect::<HashSet<_>>().len(), pairs.len());
        assert!(er.edges().iter().all(|e| e.syn_count == 1 && e.nt_override.is_none()));
        assert_ne!(er.degrees(), base.degrees());
        if let Some(p) = previous.replace(pairs.clone()) {
            assert_ne!(p, pairs);
        }
    }
}
