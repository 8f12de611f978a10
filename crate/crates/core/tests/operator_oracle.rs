//! CSR assembly and the sparse kernel against dense brute force.

use flygm::connectome::{build_signed_operator, Connectome, FlowClass, Neuron, NtType, SynapseEdge, UnknownPolarity};
use flygm::nullmodels::unit_weights;
use flygm::numeric::{spmm, Tensor2};
use flygm::Operator64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

const NTS: [NtType; 7] = [NtType::Ach, NtType::Glu, NtType::Gaba, NtType::Gly, NtType::His, NtType::Asp, NtType::Unknown];

fn random_connectome(rng: &mut ChaCha8Rng, n: usize) -> Connectome {
    let neurons = (0..n)
        .map(|id| Neuron {
            id,
            source_id: 1000 + id as u64,
            flow_class: match id % 3 {
                0 => FlowClass::Afferent,
                1 => FlowClass::Intrinsic,
                _ => FlowClass::Efferent,
            },
            superclass: "central".into(),
            nt_type: NTS[rng.random_range(0..NTS.len())],
        })
        .collect();
    let m = rng.random_range(0..=3 * n);
    let edges = (0..m)
        .map(|_| SynapseEdge {
            pre: rng.random_range(0..n),
            post: rng.random_range(0..n),
            syn_count: rng.random_range(1..20),
            nt_override: if rng.random_bool(0.2) {
                Some(NTS[rng.random_range(0..NTS.len())])
            } else {
                None
            },
        })
        .collect();
    Connectome::new(neurons, edges).unwrap()
}

/// `W[v][u] = Σ_{edges u→v} sign(nt)·count`, accumulated in integers.
fn dense_signed(c: &Connectome, unknown: UnknownPolarity) -> Vec<i64> {
    let n = c.len();
    let mut w = vec![0i64; n * n];
    for e in c.edges() {
        let nt = e.nt_override.unwrap_or(c.neurons()[e.pre].nt_type);
        let sign = match nt {
            NtType::Ach | NtType::Glu | NtType::Asp | NtType::His => 1,
            NtType::Gaba | NtType::Gly => -1,
            _ => match unknown {
                UnknownPolarity::Excitatory => 1,
                UnknownPolarity::Inhibitory => -1,
                UnknownPolarity::Silent => 0,
            },
        };
        w[e.post * n + e.pre] += sign * e.syn_count as i64;
    }
    w
}

#[test]
fn csr_matches_dense_assembly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let n = rng.random_range(1..=50);
        let c = random_connectome(&mut rng, n);
        for unknown in [UnknownPolarity::Excitatory, UnknownPolarity::Inhibitory, UnknownPolarity::Silent] {
            let op: Operator64 = build_signed_operator(&c, unknown);
            let dense: Vec<i64> = op.to_dense().iter().map(|&v| v as i64).collect();
            assert!(op.to_dense().iter().all(|v| v.fract() == 0.0));
            assert_eq!(dense, dense_signed(&c, unknown));
        }
    }
}

#[test]
fn unit_weights_is_the_adjacency() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let n = rng.random_range(1..=30);
        let c = random_connectome(&mut rng, n);
        let mut adj = vec![0.0; n * n];
        for e in c.edges() {
            adj[e.post * n + e.pre] = 1.0;
        }
        assert_eq!(unit_weights::<f64>(&c).to_dense(), adj);
    }
}

#[test]
fn spmm_matches_dense_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.random_range(1..=50);
        let c = rng.random_range(1..=16);
        let batch = rng.random_range(1..=3);
        let nnz = rng.random_range(0..=n * n / 2);
        let trip: Vec<(usize, usize, f64)> = (0..nnz)
            .map(|_| (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(-5.0..5.0)))
            .collect();
        let w = Operator64::from_triplets(n, trip).unwrap();
        let h = Tensor2::from_vec(n * batch, c, (0..n * batch * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let got = spmm(&w, &h, batch).unwrap();
        let dense = w.to_dense();
        for v in 0..n {
            for b in 0..batch {
                for k in 0..c {
                    let want: f64 = (0..n).map(|u| dense[v * n + u] * h.get(u * batch + b, k)).sum();
                    assert!((got.get(v * batch + b, k) - want).abs() <= 1e-12, "n={n} c={c} b={batch}");
                }
            }
        }
    }
}
