//! One function per subcommand.

use std::path::Path;

use anyhow::{bail, Context, Result};

use flygm::analysis::{downsample_indices, emit_report, reduce_intensity, similarity_matrix, spectral_order, StateRecording};
use flygm::connectome::{build_signed_operator, parse_connectome, read_connectome_dir, synth_connectome, write_connectome_dir, Connectome};
use flygm::env::{evaluate, rollout_dataset, write_eval_csv, CellMetrics, Command, Controller, Expert, ExpertController, PointFly, PolicyController};
use flygm::nullmodels::unit_weights;
use flygm::persistence::{save_checkpoint, save_operator, save_recording, write_dataset, Recording};
use flygm::policy::{AnyPolicy, Policy, RunningNorm};
use flygm::training::{train_il, train_rl, write_il_csv, write_rl_csv, AdamW, AdamWConfig, IlEpoch, RlIteration, ValueNet};

use crate::config::RunConfig;
use crate::exit::{missing, usage};
use crate::pipeline::{self, Topology};
use crate::run::{write_csv_file, Manifest, RunDir};

pub const OPERATOR_FILE: &str = "operator.fgm";

fn summary_line(c: &Connectome) -> String {
    let (a, i, e) = c.partition().sizes();
    format!("|V|={} |E|={} (Va={a} Vi={i} Ve={e})", c.len(), c.pair_count())
}

fn write_graph(c: &Connectome, op: &flygm::Operator64, out: &Path) -> Result<()> {
    write_connectome_dir(c, out).with_context(|| format!("cannot write connectome to {}", out.display()))?;
    save_operator(&out.join(OPERATOR_FILE), op)?;
    Ok(())
}

pub fn ingest(cfg: &RunConfig, neurons: &Path, edges: &Path, out: &Path) -> Result<String> {
    for p in [neurons, edges] {
        if !p.is_file() {
            return Err(missing(format!("input table {}", p.display())));
        }
    }
    let c = parse_connectome(neurons, edges)?;
    write_graph(&c, &build_signed_operator(&c, cfg.unknown_polarity()?), out)?;
    Ok(summary_line(&c))
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<String> {
    let c = synth_connectome(&cfg.synth_spec(cfg.run.seed))?;
    write_graph(&c, &build_signed_operator(&c, cfg.unknown_polarity()?), out)?;
    Ok(summary_line(&c))
}

pub fn topology(cfg: &RunConfig, input: &Path, mode: &str, seed: u64, out: &Path) -> Result<String> {
    let topo = Topology::parse(mode)?;
    if topo == Topology::Mlp {
        return Err(usage("topology mode must be connectome, rewired or er"));
    }
    if !input.is_dir() {
        return Err(missing(format!("connectome directory {}", input.display())));
    }
    let base = read_connectome_dir(input)?;
    let c = pipeline::variant(&base, topo, cfg, seed)?;
    let op = match topo {
        Topology::Connectome => build_signed_operator(&c, cfg.unknown_polarity()?),
        _ => unit_weights(&c),
    };
    write_graph(&c, &op, out)?;
    Ok(summary_line(&c))
}

pub fn make_dataset(cfg: &RunConfig) -> Result<String> {
    let dir = RunDir::create(cfg)?;
    let mut m = Manifest::start("make-dataset");
    let base = cfg.env_descriptor(Command::default())?;
    let (data, summary) = rollout_dataset(&base, &cfg.commands(), cfg.env.episodes_per_cell, cfg.run.seed, cfg.expert_gains())?;
    write_dataset(&dir.dataset(), &data)?;
    m.note("episodes_kept", summary.kept);
    m.note("episodes_dropped", summary.dropped);
    m.note("steps", data.num_steps());
    m.finish(&dir, cfg)?;
    Ok(format!(
        "kept {} episodes ({} dropped), {} steps",
        summary.kept,
        summary.dropped,
        data.num_steps()
    ))
}

pub fn optimizer(cfg: &RunConfig, policy: &AnyPolicy<f32>) -> AdamW<f32> {
    AdamW::new(
        policy.params(),
        AdamWConfig {
            lr: cfg.il.lr,
            weight_decay: cfg.il.weight_decay,
            clip_norm: cfg.il.grad_clip_norm,
            ..AdamWConfig::default()
        },
    )
}

/// Imitation training of `policy` on `data`; returns the curve, the fitted
/// normalizer and the optimizer.
pub fn imitate(cfg: &RunConfig, policy: &mut AnyPolicy<f32>, data: &flygm::env::Dataset, seed: u64) -> Result<(Vec<IlEpoch>, RunningNorm, AdamW<f32>)> {
    let mut norm = RunningNorm::new(policy.obs_dim());
    let mut opt = optimizer(cfg, policy);
    let curve = train_il(policy, &mut norm, data, &cfg.il_config(seed), &mut opt, |_, _| Ok(()))?;
    Ok((curve, norm, opt))
}

pub fn train_il_cmd(cfg: &RunConfig) -> Result<String> {
    let dir = RunDir::create(cfg)?;
    let data = pipeline::load_dataset(&dir.dataset())?;
    let mut m = Manifest::start("train-il");
    let (mut policy, _) = pipeline::configured_policy(cfg)?;
    let (curve, norm, opt) = imitate(cfg, &mut policy, &data, cfg.run.seed)?;
    write_csv_file(&dir.metrics("il.csv"), |b| write_il_csv(&curve, b))?;
    save_checkpoint(&dir.ckpt("il.fgm"), policy.params(), Some(&norm), Some(&opt))?;
    let (first, last) = (curve[0], *curve.last().unwrap());
    m.note("policy", policy.kind());
    m.note("final_mu_mse", last.mu_mse);
    m.finish(&dir, cfg)?;
    Ok(format!("mu_mse {:.6} -> {:.6} over {} epochs", first.mu_mse, last.mu_mse, last.epoch))
}

/// Observation statistics from one zero-action episode, for policies that
/// start without imitation.
fn scratch_norm(cfg: &RunConfig, command: Command) -> Result<RunningNorm> {
    let desc = cfg.env_descriptor(command)?;
    let mut env = PointFly::new(desc.clone())?;
    let mut norm = RunningNorm::new(desc.obs_dim());
    let mut obs = env.reset(cfg.run.seed);
    let zero = vec![0.0; desc.act_dim()];
    loop {
        norm.update(&obs)?;
        let out = env.step(&zero)?;
        if out.done {
            break;
        }
        obs = env.observe();
    }
    norm.freeze();
    Ok(norm)
}

pub fn fine_tune(cfg: &RunConfig, policy: &mut AnyPolicy<f32>, norm: &RunningNorm) -> Result<Vec<RlIteration>> {
    let [speed, yaw] = cfg.ppo.command;
    let desc = cfg.env_descriptor(Command::walk(speed, yaw))?;
    let mut value = ValueNet::<f32>::new(policy.obs_dim(), cfg.run.seed.wrapping_add(1))?;
    Ok(train_rl(policy, &mut value, norm, &desc, &cfg.ppo_config(), |_, _| Ok(()))?)
}

pub fn train_rl_cmd(cfg: &RunConfig, init: Option<&Path>, from_scratch: bool) -> Result<String> {
    let dir = RunDir::create(cfg)?;
    let (mut policy, _) = pipeline::configured_policy(cfg)?;
    let default_init = dir.ckpt("il.fgm");
    let init_path = match init {
        Some(p) => Some(pipeline::find_checkpoint(Some(p), &[])?),
        None if default_init.is_file() => Some(default_init),
        None => None,
    };
    let norm = match (&init_path, from_scratch) {
        (Some(p), false) => pipeline::restore(&mut policy, p)?,
        (_, true) => scratch_norm(cfg, Command::walk(cfg.ppo.command[0], cfg.ppo.command[1]))?,
        (None, false) => {
            return Err(crate::exit::MissingArtifact(format!(
                "no initial policy: expected {} (run train-il or pass --init/--from-scratch)",
                dir.ckpt("il.fgm").display()
            ))
            .into())
        }
    };
    let mut m = Manifest::start("train-rl");
    let curve = fine_tune(cfg, &mut policy, &norm)?;
    write_csv_file(&dir.metrics("rl.csv"), |b| write_rl_csv(&curve, b))?;
    save_checkpoint(&dir.ckpt("rl.fgm"), policy.params(), Some(&norm), None)?;
    m.note("init", init_path.as_ref().map_or("scratch".to_string(), |p| p.display().to_string()));
    m.note("iterations", curve.len());
    m.finish(&dir, cfg)?;
    let last = curve.last().map_or(f64::NAN, |r| r.mean_return);
    Ok(format!("{} iterations, last mean return {last:.3}", curve.len()))
}

pub fn format_grid(metrics: &[CellMetrics]) -> String {
    let mut s = String::from("cell        pos_err              angle_err\n");
    for m in metrics {
        s.push_str(&format!(
            "{:<10}  {:.4} ± {:.4}    {:.4} ± {:.4}\n",
            m.command.label(),
            m.pos_err_mean,
            m.pos_err_std,
            m.angle_err_mean,
            m.angle_err_std
        ));
    }
    s
}

pub fn evaluate_with(cfg: &RunConfig, ctrl: &mut dyn Controller) -> Result<Vec<CellMetrics>> {
    let base = cfg.env_descriptor(Command::default())?;
    Ok(evaluate(ctrl, &base, &cfg.commands(), cfg.eval.episodes, cfg.eval.seed)?)
}

pub fn eval_cmd(cfg: &RunConfig, ckpt: Option<&Path>, expert: bool) -> Result<String> {
    let dir = RunDir::create(cfg)?;
    let mut m = Manifest::start("eval");
    let (metrics, file) = if expert {
        let desc = cfg.env_descriptor(Command::default())?;
        let mut ctrl = ExpertController(Expert::new(&desc, cfg.expert_gains()));
        (evaluate_with(cfg, &mut ctrl)?, "eval_expert.csv")
    } else {
        let path = pipeline::find_checkpoint(ckpt, &[dir.ckpt("rl.fgm"), dir.ckpt("il.fgm")])?;
        let (mut policy, _) = pipeline::configured_policy(cfg)?;
        let norm = pipeline::restore(&mut policy, &path)?;
        m.note("checkpoint", path.display());
        let mut ctrl = PolicyController::new(&policy, &norm);
        (evaluate_with(cfg, &mut ctrl)?, "eval.csv")
    };
    write_csv_file(&dir.metrics(file), |b| write_eval_csv(&metrics, b))?;
    m.finish(&dir, cfg)?;
    Ok(format_grid(&metrics))
}

/// Runs the policy deterministically and records the neuron states after
/// every control step.
pub fn record_states(cfg: &RunConfig, policy: &AnyPolicy<f32>, norm: &RunningNorm) -> Result<Recording> {
    let AnyPolicy::Graph(g) = policy else {
        return Err(usage("analyze needs a graph policy (topology.mode is mlp)"));
    };
    let [speed, yaw] = cfg.analysis.command;
    let mut env = PointFly::new(cfg.env_descriptor(Command::walk(speed, yaw))?)?;
    let mut rec = Recording::new(g.num_neurons(), g.config().channels);
    let mut state = policy.initial_state(1);
    let mut obs = env.reset(cfg.run.seed);
    for _ in 0..cfg.analysis.steps {
        let x: Vec<f32> = norm.apply(&obs)?.into_iter().map(|v| v as f32).collect();
        let d = policy.act(&mut state, &x)?;
        rec.push(&state)?;
        let a: Vec<f64> = d.mu.iter().map(|&v| v as f64).collect();
        let out = env.step(&a)?;
        if out.done {
            break;
        }
        obs = env.observe();
    }
    Ok(rec)
}

pub fn analyze_cmd(cfg: &RunConfig, ckpt: Option<&Path>) -> Result<String> {
    let dir = RunDir::create(cfg)?;
    let path = pipeline::find_checkpoint(ckpt, &[dir.ckpt("rl.fgm"), dir.ckpt("il.fgm")])?;
    let (mut policy, graph) = pipeline::configured_policy(cfg)?;
    let norm = pipeline::restore(&mut policy, &path)?;
    let graph = graph.ok_or_else(|| usage("analyze needs a graph policy (topology.mode is mlp)"))?;
    let mut m = Manifest::start("analyze");
    let rec = record_states(cfg, &policy, &norm)?;
    if rec.steps < 2 {
        bail!("episode ended after {} steps; nothing to analyze", rec.steps);
    }
    save_recording(&dir.report().join("states.fgm"), &rec)?;
    let full = StateRecording::from_recording(&rec, &graph)?;
    let keep = downsample_indices(&full.superclass, &cfg.analysis.caps, cfg.run.seed)?;
    let kept = full.select(&keep);
    let map = reduce_intensity(&full)?.select(&keep);
    let series: Vec<Vec<f64>> = (0..map.neurons).map(|n| map.series(n)).collect();
    let order = spectral_order(&similarity_matrix(&series, &cfg.similarity())?)?;
    let manifest = vec![
        ("checkpoint".to_string(), path.display().to_string()),
        ("steps".to_string(), rec.steps.to_string()),
        ("neurons_recorded".to_string(), rec.neurons.to_string()),
        ("neurons_shown".to_string(), kept.neurons.to_string()),
    ];
    let files = emit_report(&dir.report(), &map, &order, &kept.ids, &kept.flow, &kept.superclass, &manifest)?;
    m.note("report", files.csv.display());
    m.finish(&dir, cfg)?;
    Ok(format!(
        "{} steps, {} of {} neurons shown; report in {}",
        rec.steps,
        kept.neurons,
        rec.neurons,
        dir.report().display()
    ))
}

/// Reads a cached connectome directory back (used by tests and tooling).
pub fn read_graph(dir: &Path) -> Result<(Connectome, flygm::Operator64)> {
    let c = read_connectome_dir(dir)?;
    let op = flygm::persistence::load_operator(&dir.join(OPERATOR_FILE))?;
    Ok((c, op))
}
