//! Run configuration: a TOML file with one table per pipeline stage. Every
//! key has a default, unknown keys are rejected, and `section.key=value`
//! overrides are applied before validation.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use flygm::analysis::SimilarityConfig;
use flygm::connectome::{SynthSpec, UnknownPolarity};
use flygm::env::{Command, EnvDescriptor, EnvKind, ExpertGains, COMMAND_GRID};
use flygm::numeric::Activation;
use flygm::policy::{FlyGmConfig, MlpConfig};
use flygm::training::{IlConfig, PpoConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub run: RunSection,
    pub connectome: ConnectomeSection,
    pub topology: TopologySection,
    pub policy: PolicySection,
    pub env: EnvSection,
    pub il: IlSection,
    pub ppo: PpoSection,
    pub eval: EvalSection,
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    pub out_dir: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConnectomeSection {
    /// `synthetic` or a directory written by `ingest`/`synth`/`topology`.
    pub source: String,
    pub n_afferent: usize,
    pub n_intrinsic: usize,
    pub n_efferent: usize,
    pub n_edges: usize,
    pub modularity: f64,
    pub n_blocks: usize,
    pub mean_syn_count: f64,
    /// `excitatory`, `inhibitory` or `silent`.
    pub unknown_polarity: String,
    /// Use unit weights for the connectome arm as well.
    pub unit_weights: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    /// `connectome`, `rewired`, `er` or `mlp`.
    pub mode: String,
    pub swaps_per_edge: f64,
    pub max_attempts_factor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub channels: usize,
    pub eta_dim: usize,
    pub enc_dim: usize,
    pub update_hidden: usize,
    pub decoder_hidden: usize,
    pub iterations: usize,
    pub per_iteration_update: bool,
    pub reset_state_each_step: bool,
    /// `none` or `tanh`, applied to the update MLP output.
    pub state_activation: String,
    pub mlp_hidden: usize,
    pub mlp_layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub kind: String,
    pub dt: f64,
    pub episode_len: usize,
    pub init_noise: f64,
    /// `[speed, yaw]` pairs.
    pub commands: Vec<[f64; 2]>,
    pub episodes_per_cell: usize,
    pub expert_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlSection {
    pub alpha: f64,
    pub lambda0: f64,
    pub lambda_end_frac: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub grad_clip_norm: f64,
    pub weight_decay: f64,
    pub bptt_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoSection {
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs_per_batch: usize,
    pub minibatch_size: usize,
    pub rollout_horizon: usize,
    pub chunk_len: usize,
    pub n_envs: usize,
    pub lr: f64,
    pub value_lr: f64,
    pub grad_clip_norm: f64,
    pub total_steps: usize,
    /// Command the fine-tuning runs on.
    pub command: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub alpha: f64,
    pub distance_as_similarity: bool,
    /// Recorded control steps.
    pub steps: usize,
    pub command: [f64; 2],
    pub caps: std::collections::BTreeMap<String, usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            name: "run".into(),
            out_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl Default for ConnectomeSection {
    fn default() -> Self {
        let s = SynthSpec::default();
        ConnectomeSection {
            source: "synthetic".into(),
            n_afferent: s.n_afferent,
            n_intrinsic: s.n_intrinsic,
            n_efferent: s.n_efferent,
            n_edges: s.n_edges,
            modularity: s.modularity,
            n_blocks: s.n_blocks,
            mean_syn_count: s.mean_syn_count,
            unknown_polarity: "excitatory".into(),
            unit_weights: false,
        }
    }
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection {
            mode: "connectome".into(),
            swaps_per_edge: 10.0,
            max_attempts_factor: 100,
        }
    }
}

impl Default for PolicySection {
    fn default() -> Self {
        let g = FlyGmConfig::new(1, 1);
        let m = MlpConfig::new(1, 1);
        PolicySection {
            channels: g.channels,
            eta_dim: g.eta_dim,
            enc_dim: g.enc_dim,
            update_hidden: g.update_hidden,
            decoder_hidden: g.decoder_hidden,
            iterations: g.iterations,
            per_iteration_update: g.per_iteration_update,
            reset_state_each_step: g.reset_state_each_step,
            state_activation: "tanh".into(),
            mlp_hidden: m.hidden,
            mlp_layers: m.layers,
        }
    }
}

impl Default for EnvSection {
    fn default() -> Self {
        let d = EnvDescriptor::new(EnvKind::Walk, Command::default());
        EnvSection {
            kind: EnvKind::Walk.as_str().into(),
            dt: d.dt,
            episode_len: d.episode_len,
            init_noise: d.init_noise,
            commands: COMMAND_GRID.iter().map(|&(s, y)| [s, y]).collect(),
            episodes_per_cell: 4,
            expert_sigma: ExpertGains::default().sigma,
        }
    }
}

impl Default for IlSection {
    fn default() -> Self {
        let c = IlConfig::default();
        IlSection {
            alpha: c.alpha,
            lambda0: c.lambda0,
            lambda_end_frac: c.lambda_end_frac,
            batch_size: c.batch_size,
            epochs: c.epochs,
            lr: c.lr,
            grad_clip_norm: c.grad_clip_norm,
            weight_decay: 1e-4,
            bptt_window: c.bptt_window,
        }
    }
}

impl Default for PpoSection {
    fn default() -> Self {
        let c = PpoConfig::default();
        PpoSection {
            clip_eps: c.clip_eps,
            value_coef: c.value_coef,
            entropy_coef: c.entropy_coef,
            gamma: c.gamma,
            gae_lambda: c.gae_lambda,
            epochs_per_batch: c.epochs_per_batch,
            minibatch_size: c.minibatch_size,
            rollout_horizon: c.rollout_horizon,
            chunk_len: c.chunk_len,
            n_envs: c.n_envs,
            lr: c.lr,
            value_lr: c.value_lr,
            grad_clip_norm: c.grad_clip_norm,
            total_steps: c.total_steps,
            command: [3.0, 0.0],
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { episodes: 4, seed: 1000 }
    }
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let s = SimilarityConfig::default();
        AnalysisSection {
            alpha: s.alpha,
            distance_as_similarity: s.distance_as_similarity,
            steps: 200,
            command: [3.0, 4.0],
            caps: flygm::analysis::default_caps(),
        }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.into()),
    }
}

/// Applies `section.key=value` to a raw table.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, value) = spec.split_once('=').with_context(|| format!("override {spec:?} is not section.key=value"))?;
    let (section, key) = path.split_once('.').with_context(|| format!("override {path:?} is not section.key"))?;
    let entry = table.entry(section.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let Some(t) = entry.as_table_mut() else {
        bail!("{section} is not a section");
    };
    t.insert(key.to_string(), parse_value(value));
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().context("config is not valid TOML")?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env_kind()?;
        self.unknown_polarity()?;
        self.state_activation()?;
        if !["connectome", "rewired", "er", "mlp"].contains(&self.topology.mode.as_str()) {
            bail!("topology.mode must be connectome, rewired, er or mlp");
        }
        if self.env.commands.is_empty() {
            bail!("env.commands must not be empty");
        }
        self.il_config(0).validate()?;
        self.ppo_config().validate()?;
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.run.out_dir.join(&self.run.name)
    }

    pub fn env_kind(&self) -> Result<EnvKind> {
        Ok(self.env.kind.parse()?)
    }

    pub fn unknown_polarity(&self) -> Result<UnknownPolarity> {
        Ok(match self.connectome.unknown_polarity.as_str() {
            "excitatory" => UnknownPolarity::Excitatory,
            "inhibitory" => UnknownPolarity::Inhibitory,
            "silent" => UnknownPolarity::Silent,
            other => bail!("connectome.unknown_polarity: unknown value {other:?}"),
        })
    }

    pub fn state_activation(&self) -> Result<Option<Activation>> {
        Ok(match self.policy.state_activation.as_str() {
            "none" => None,
            "tanh" => Some(Activation::Tanh),
            other => bail!("policy.state_activation: unknown value {other:?}"),
        })
    }

    pub fn synth_spec(&self, seed: u64) -> SynthSpec {
        let c = &self.connectome;
        SynthSpec {
            n_afferent: c.n_afferent,
            n_intrinsic: c.n_intrinsic,
            n_efferent: c.n_efferent,
            n_edges: c.n_edges,
            modularity: c.modularity,
            n_blocks: c.n_blocks,
            mean_syn_count: c.mean_syn_count,
            seed,
            ..SynthSpec::default()
        }
    }

    pub fn commands(&self) -> Vec<Command> {
        self.env.commands.iter().map(|&[s, y]| Command::walk(s, y)).collect()
    }

    pub fn env_descriptor(&self, command: Command) -> Result<EnvDescriptor> {
        Ok(EnvDescriptor {
            dt: self.env.dt,
            episode_len: self.env.episode_len,
            init_noise: self.env.init_noise,
            ..EnvDescriptor::new(self.env_kind()?, command)
        })
    }

    pub fn expert_gains(&self) -> ExpertGains {
        ExpertGains {
            sigma: self.env.expert_sigma,
            ..ExpertGains::default()
        }
    }

    pub fn il_config(&self, seed: u64) -> IlConfig {
        let c = &self.il;
        IlConfig {
            alpha: c.alpha,
            lambda0: c.lambda0,
            lambda_end_frac: c.lambda_end_frac,
            batch_size: c.batch_size,
            epochs: c.epochs,
            lr: c.lr,
            grad_clip_norm: c.grad_clip_norm,
            bptt_window: c.bptt_window,
            seed,
        }
    }

    pub fn ppo_config(&self) -> PpoConfig {
        let c = &self.ppo;
        PpoConfig {
            clip_eps: c.clip_eps,
            value_coef: c.value_coef,
            entropy_coef: c.entropy_coef,
            gamma: c.gamma,
            gae_lambda: c.gae_lambda,
            epochs_per_batch: c.epochs_per_batch,
            minibatch_size: c.minibatch_size,
            rollout_horizon: c.rollout_horizon,
            chunk_len: c.chunk_len,
            n_envs: c.n_envs,
            lr: c.lr,
            value_lr: c.value_lr,
            grad_clip_norm: c.grad_clip_norm,
            total_steps: c.total_steps,
            seed: self.run.seed,
        }
    }

    pub fn similarity(&self) -> SimilarityConfig {
        SimilarityConfig {
            alpha: self.analysis.alpha,
            distance_as_similarity: self.analysis.distance_as_similarity,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[il]\nepochz = 3\n", &[]).unwrap_err();
        assert!(format!("{err:#}").contains("epochz"), "{err:#}");
        assert!(RunConfig::from_toml("", &["nosuch.key=1".into()]).is_err());
    }

    #[test]
    fn overrides_apply_and_resolved_config_round_trips() {
        let cfg = RunConfig::from_toml(
            "[il]\nepochs = 3\n",
            &["il.epochs=7".into(), "run.name=abc".into(), "env.commands=[[2.0, 0.0]]".into()],
        )
        .unwrap();
        assert_eq!(cfg.il.epochs, 7);
        assert_eq!(cfg.run.name, "abc");
        assert_eq!(cfg.commands(), vec![Command::walk(2.0, 0.0)]);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml(), &[]).unwrap(), cfg);
    }
}
