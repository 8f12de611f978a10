//! Shared building blocks: graph resolution, policy construction and
//! checkpoint handling.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use flygm::connectome::{build_signed_operator, read_connectome_dir, synth_connectome, Connectome};
use flygm::env::Dataset;
use flygm::nullmodels::{degree_preserving_rewire, erdos_renyi_like, unit_weights, RewireConfig};
use flygm::persistence::{load_checkpoint, read_dataset};
use flygm::policy::{AnyPolicy, FlyGm, FlyGmConfig, MlpConfig, MlpPolicy, Policy, RunningNorm};
use flygm::Operator32;

use crate::config::RunConfig;
use crate::exit::missing;

/// Comparison arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Connectome,
    Rewired,
    Er,
    Mlp,
}

impl Topology {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "connectome" => Topology::Connectome,
            "rewired" => Topology::Rewired,
            "er" => Topology::Er,
            "mlp" => Topology::Mlp,
            other => return Err(crate::exit::usage(format!("unknown topology {other:?} (connectome, rewired, er, mlp)"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Topology::Connectome => "connectome",
            Topology::Rewired => "rewired",
            Topology::Er => "er",
            Topology::Mlp => "mlp",
        }
    }
}

/// The base connectome named by `connectome.source`.
pub fn base_connectome(cfg: &RunConfig) -> Result<Connectome> {
    if cfg.connectome.source == "synthetic" {
        return Ok(synth_connectome(&cfg.synth_spec(cfg.run.seed))?);
    }
    let dir = PathBuf::from(&cfg.connectome.source);
    if !dir.is_dir() {
        return Err(missing(format!("connectome directory {}", dir.display())));
    }
    read_connectome_dir(&dir).with_context(|| format!("cannot read connectome from {}", dir.display()))
}

/// Applies the null model of `topo` (seeded by `seed`) to `base`.
pub fn variant(base: &Connectome, topo: Topology, cfg: &RunConfig, seed: u64) -> Result<Connectome> {
    Ok(match topo {
        Topology::Connectome | Topology::Mlp => base.clone(),
        Topology::Er => erdos_renyi_like(base, seed)?,
        Topology::Rewired => {
            let out = degree_preserving_rewire(
                base,
                &RewireConfig {
                    swaps_per_edge: cfg.topology.swaps_per_edge,
                    seed,
                    max_attempts_factor: cfg.topology.max_attempts_factor,
                },
            )?;
            if let Some(w) = &out.warning {
                log::warn!("{w}");
            }
            out.connectome
        }
    })
}

/// Signed weights for the connectome arm (unless `connectome.unit_weights`),
/// unit weights for the null models.
pub fn operator(c: &Connectome, topo: Topology, cfg: &RunConfig) -> Result<Operator32> {
    Ok(match topo {
        Topology::Connectome if !cfg.connectome.unit_weights => build_signed_operator(c, cfg.unknown_polarity()?),
        _ => unit_weights(c),
    })
}

pub fn graph_config(cfg: &RunConfig) -> Result<FlyGmConfig> {
    let kind = cfg.env_kind()?;
    let p = &cfg.policy;
    Ok(FlyGmConfig {
        channels: p.channels,
        eta_dim: p.eta_dim,
        enc_dim: p.enc_dim,
        update_hidden: p.update_hidden,
        decoder_hidden: p.decoder_hidden,
        iterations: p.iterations,
        per_iteration_update: p.per_iteration_update,
        reset_state_each_step: p.reset_state_each_step,
        state_activation: cfg.state_activation()?,
        ..FlyGmConfig::new(kind.obs_dim(), kind.act_dim())
    })
}

/// Builds the policy for `topo`; the connectome is also returned for the
/// graph arms.
pub fn build_policy(cfg: &RunConfig, base: Option<&Connectome>, topo: Topology, seed: u64) -> Result<(AnyPolicy<f32>, Option<Connectome>)> {
    let kind = cfg.env_kind()?;
    if topo == Topology::Mlp {
        let m = MlpConfig {
            enc_dim: cfg.policy.enc_dim,
            hidden: cfg.policy.mlp_hidden,
            layers: cfg.policy.mlp_layers,
            ..MlpConfig::new(kind.obs_dim(), kind.act_dim())
        };
        return Ok((AnyPolicy::Mlp(MlpPolicy::new(m, seed)?), None));
    }
    let owned;
    let base = match base {
        Some(b) => b,
        None => {
            owned = base_connectome(cfg)?;
            &owned
        }
    };
    let graph = variant(base, topo, cfg, seed)?;
    let op = operator(&graph, topo, cfg)?;
    let policy = FlyGm::new(graph_config(cfg)?, op, graph.partition(), seed)?;
    Ok((AnyPolicy::Graph(policy), Some(graph)))
}

/// The policy configured by `topology.mode`.
pub fn configured_policy(cfg: &RunConfig) -> Result<(AnyPolicy<f32>, Option<Connectome>)> {
    build_policy(cfg, None, Topology::parse(&cfg.topology.mode)?, cfg.run.seed)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    if !path.is_file() {
        return Err(missing(format!("dataset {} (run make-dataset first)", path.display())));
    }
    read_dataset(path).with_context(|| format!("cannot read dataset {}", path.display()))
}

/// Restores parameters and the observation normalizer from `path`.
pub fn restore(policy: &mut AnyPolicy<f32>, path: &Path) -> Result<RunningNorm> {
    let ck = load_checkpoint(path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    ck.restore_params(policy.params_mut())
        .with_context(|| format!("checkpoint {} does not fit the configured policy", path.display()))?;
    let norm = ck
        .norm()?
        .with_context(|| format!("checkpoint {} has no observation normalizer", path.display()))?;
    Ok(norm)
}

/// First existing checkpoint among `candidates`.
pub fn find_checkpoint(explicit: Option<&Path>, candidates: &[PathBuf]) -> Result<PathBuf> {
    if let Some(p) = explicit {
        if !p.is_file() {
            return Err(missing(format!("checkpoint {}", p.display())));
        }
        return Ok(p.to_path_buf());
    }
    candidates.iter().find(|p| p.is_file()).cloned().ok_or_else(|| {
        missing(format!(
            "checkpoint {}",
            candidates.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(" or ")
        ))
    })
}
