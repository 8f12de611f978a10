//! Taped policies against plain-loop reimplementations, and finite-difference
//! gradient checks of both training losses through the full graph step.

#![allow(clippy::needless_range_loop)]

use flygm::connectome::{build_signed_operator, synth_connectome, Connectome, SynthSpec, UnknownPolarity};
use flygm::numeric::{grad_check, softplus, Activation, GradCheckConfig, ParamStore, SurrogateBatch, Tape, Tensor2};
use flygm::policy::{FlyGm, FlyGmConfig, MlpConfig, MlpPolicy, Policy, SIGMA_FLOOR};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

const OBS: usize = 5;
const ACT: usize = 2;

fn fixture_graph() -> Connectome {
    synth_connectome(&SynthSpec {
        n_afferent: 6,
        n_intrinsic: 10,
        n_efferent: 4,
        n_edges: 60,
        n_blocks: 2,
        seed: 5,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn fixture_config() -> FlyGmConfig {
    FlyGmConfig {
        channels: 3,
        eta_dim: 2,
        enc_dim: 4,
        update_hidden: 5,
        decoder_hidden: 6,
        iterations: 2,
        ..FlyGmConfig::new(OBS, ACT)
    }
}

fn fixture_policy(cfg: FlyGmConfig) -> (FlyGm<f64>, Connectome) {
    let g = fixture_graph();
    let op = build_signed_operator(&g, UnknownPolarity::Excitatory);
    (FlyGm::new(cfg, op, g.partition(), 9).unwrap(), g)
}

fn param(p: &ParamStore<f64>, name: &str) -> Tensor2<f64> {
    p.get(p.id(name).unwrap_or_else(|| panic!("no parameter {name}"))).clone()
}

/// `W x + b` for a `out x in` weight.
fn linear(p: &ParamStore<f64>, name: &str, x: &[f64]) -> Vec<f64> {
    let (w, b) = (param(p, &format!("{name}.weight")), param(p, &format!("{name}.bias")));
    assert_eq!(w.cols(), x.len(), "{name}");
    (0..w.rows())
        .map(|o| b.get(0, o) + (0..w.cols()).map(|i| w.get(o, i) * x[i]).sum::<f64>())
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

/// One control step for one sequence; `h` is `neurons x channels`.
fn reference_step(policy: &FlyGm<f64>, g: &Connectome, h: &mut Vec<Vec<f64>>, obs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let cfg = policy.config();
    let p = policy.params();
    let n = g.len();
    let dense = build_signed_operator::<f64>(g, UnknownPolarity::Excitatory).to_dense();
    if cfg.reset_state_each_step {
        *h = vec![vec![0.0; cfg.channels]; n];
    }
    let x = relu(linear(p, "enc", obs));
    for &a in &g.partition().afferent {
        let z: Vec<f64> = h[a].iter().chain(&x).copied().collect();
        h[a] = linear(p, "gate", &z).into_iter().map(f64::tanh).collect();
    }
    let eta = param(p, "eta");
    for k in 0..cfg.iterations {
        let prefix = if cfg.per_iteration_update {
            format!("update{k}")
        } else {
            "update".to_string()
        };
        let m: Vec<Vec<f64>> = (0..n)
            .map(|v| (0..cfg.channels).map(|c| (0..n).map(|u| dense[v * n + u] * h[u][c]).sum()).collect())
            .collect();
        *h = (0..n)
            .map(|v| {
                let z: Vec<f64> = m[v].iter().copied().chain(eta.row(v).iter().copied()).collect();
                let out = linear(p, &format!("{prefix}.fc2"), &relu(linear(p, &format!("{prefix}.fc1"), &z)));
                match cfg.state_activation {
                    Some(Activation::Tanh) => out.into_iter().map(f64::tanh).collect(),
                    _ => out,
                }
            })
            .collect();
    }
    let flat: Vec<f64> = g.partition().efferent.iter().flat_map(|&e| h[e].clone()).collect();
    let d = relu(linear(p, "dec.fc2", &relu(linear(p, "dec.fc1", &flat))));
    let mu = linear(p, "mean_head", &d);
    let sigma = linear(p, "std_head", &d).into_iter().map(|v| softplus(v) + SIGMA_FLOOR).collect();
    (mu, sigma)
}

fn random_obs(rng: &mut ChaCha8Rng, rows: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..OBS).map(|_| rng.random_range(-1.5..1.5)).collect()).collect()
}

fn check_against_reference(cfg: FlyGmConfig) {
    let (policy, g) = fixture_policy(cfg);
    let (n, c) = (g.len(), policy.config().channels);
    let batch = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut refs = vec![vec![vec![0.0; c]; n]; batch];
    let mut state = policy.initial_state(batch);
    for step in 0..3 {
        let obs = random_obs(&mut rng, batch);
        let mut tape = Tape::new();
        let s = tape.input(state.clone());
        let o = tape.input(Tensor2::from_rows(&obs).unwrap());
        let out = policy.step(&mut tape, policy.params(), s, o, batch).unwrap();
        for b in 0..batch {
            let (mu, sigma) = reference_step(&policy, &g, &mut refs[b], &obs[b]);
            for a in 0..ACT {
                assert!((tape.value(out.mu).get(b, a) - mu[a]).abs() < 1e-12, "step {step} mu");
                assert!((tape.value(out.sigma).get(b, a) - sigma[a]).abs() < 1e-12, "step {step} sigma");
            }
            for v in 0..n {
                for k in 0..c {
                    assert!((tape.value(out.state).get(v * batch + b, k) - refs[b][v][k]).abs() < 1e-12);
                }
            }
        }
        state = tape.value(out.state).clone();
    }
}

#[test]
fn graph_step_matches_reference() {
    check_against_reference(fixture_config());
}

#[test]
fn graph_step_variants_match_reference() {
    check_against_reference(FlyGmConfig {
        per_iteration_update: true,
        state_activation: Some(Activation::Tanh),
        ..fixture_config()
    });
    check_against_reference(FlyGmConfig {
        reset_state_each_step: true,
        iterations: 3,
        ..fixture_config()
    });
}

#[test]
fn untaped_act_matches_batched_step() {
    let (policy, _) = fixture_policy(fixture_config());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let obs = random_obs(&mut rng, 2);
    let mut single = policy.initial_state(1);
    let mut tape = Tape::new();
    let s = tape.input(policy.initial_state(2));
    let o = tape.input(Tensor2::from_rows(&obs).unwrap());
    let out = policy.step(&mut tape, policy.params(), s, o, 2).unwrap();
    let d = policy.act(&mut single, &obs[1]).unwrap();
    for a in 0..ACT {
        assert!((tape.value(out.mu).get(1, a) - d.mu[a]).abs() < 1e-12);
    }
}

#[test]
fn mlp_matches_reference() {
    let cfg = MlpConfig {
        enc_dim: 4,
        hidden: 7,
        layers: 3,
        ..MlpConfig::new(OBS, ACT)
    };
    let policy = MlpPolicy::<f64>::new(cfg, 2).unwrap();
    let p = policy.params();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let obs = random_obs(&mut rng, 4);
    let mut tape = Tape::new();
    let s = tape.input(policy.initial_state(4));
    let o = tape.input(Tensor2::from_rows(&obs).unwrap());
    let out = policy.step(&mut tape, p, s, o, 4).unwrap();
    for (b, x) in obs.iter().enumerate() {
        let mut h = relu(linear(p, "enc", x));
        for l in 1..=3 {
            h = relu(linear(p, &format!("mlp.fc{l}"), &h));
        }
        let mu = linear(p, "mean_head", &h);
        let sigma: Vec<f64> = linear(p, "std_head", &h).into_iter().map(|v| softplus(v) + SIGMA_FLOOR).collect();
        for a in 0..ACT {
            assert!((tape.value(out.mu).get(b, a) - mu[a]).abs() < 1e-12);
            assert!((tape.value(out.sigma).get(b, a) - sigma[a]).abs() < 1e-12);
        }
    }
}

fn gradcheck_config() -> GradCheckConfig {
    GradCheckConfig {
        tolerance: 1e-4,
        ..GradCheckConfig::default()
    }
}

/// Two control steps over a batch of two, so gradients flow through the
/// carried state as well.
fn two_step_outputs(policy: &FlyGm<f64>, p: &ParamStore<f64>, tape: &mut Tape<f64>, obs: &[Vec<Vec<f64>>]) -> (flygm::numeric::Var, flygm::numeric::Var) {
    let mut s = tape.input(policy.initial_state(2));
    let mut last = None;
    for o in obs {
        let ov = tape.input(Tensor2::from_rows(o).unwrap());
        let out = policy.step(tape, p, s, ov, 2).unwrap();
        s = out.state;
        last = Some((out.mu, out.sigma));
    }
    last.unwrap()
}

#[test]
fn imitation_loss_gradients() {
    let (policy, _) = fixture_policy(FlyGmConfig {
        state_activation: Some(Activation::Tanh),
        ..fixture_config()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let obs = vec![random_obs(&mut rng, 2), random_obs(&mut rng, 2)];
    let emu = Tensor2::from_vec(2, ACT, (0..2 * ACT).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let esig = Tensor2::from_vec(2, ACT, (0..2 * ACT).map(|_| rng.random_range(0.3..1.2)).collect()).unwrap();
    let mut store = policy.params().clone();
    let report = grad_check(
        &mut store,
        |p, tape| {
            let (mu, sigma) = two_step_outputs(&policy, p, tape, &obs);
            tape.imitation_loss(mu, sigma, emu.clone(), esig.clone(), 0.7, 0.1, None)
        },
        &gradcheck_config(),
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.worst_block());
}

#[test]
fn surrogate_loss_gradients() {
    let (policy, _) = fixture_policy(fixture_config());
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let obs = vec![random_obs(&mut rng, 2), random_obs(&mut rng, 2)];
    let actions = Tensor2::from_vec(2, ACT, (0..2 * ACT).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut store = policy.params().clone();
    // Old log-probabilities at the current parameters keep every ratio near 1,
    // away from the clip kinks.
    let old: Vec<f64> = {
        let mut tape = Tape::new();
        let (mu, sigma) = two_step_outputs(&policy, &store, &mut tape, &obs);
        (0..2)
            .map(|r| {
                flygm::policy::log_prob_and_entropy(tape.value(mu).row(r), tape.value(sigma).row(r), actions.row(r))
                    .unwrap()
                    .0
                    + 0.05
            })
            .collect()
    };
    let report = grad_check(
        &mut store,
        |p, tape| {
            let (mu, sigma) = two_step_outputs(&policy, p, tape, &obs);
            let batch = SurrogateBatch {
                actions: actions.clone(),
                old_log_probs: old.clone(),
                advantages: vec![1.3, -0.6],
                mask: vec![1.0, 1.0],
            };
            Ok(tape.clipped_surrogate(mu, sigma, batch, 0.2, 0.01)?.0)
        },
        &gradcheck_config(),
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.worst_block());
}
