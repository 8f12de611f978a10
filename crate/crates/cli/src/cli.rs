//! Argument parsing and dispatch.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::commands;
use crate::compare::{compare, CompareOptions};
use crate::config::RunConfig;
use crate::exit::usage;
use crate::pipeline::Topology;

#[derive(Debug, Parser)]
#[command(name = "flygm", version, about = "Connectome-structured policy pipeline")]
pub struct Cli {
    /// Run configuration (TOML). Keys can be overridden with `--section.key=value`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Parse neuron and edge tables into a cached connectome directory.
    Ingest {
        #[arg(long)]
        neurons: PathBuf,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the seeded synthetic connectome described by `[connectome]`.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a graph variant: pass-through, degree-preserving rewiring or Erdős–Rényi.
    Topology {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out the scripted expert over the command grid.
    MakeDataset,
    /// Imitation training on the run's dataset.
    TrainIl,
    /// PPO fine-tuning from the imitation checkpoint.
    TrainRl {
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        from_scratch: bool,
    },
    /// Evaluate a checkpoint (or the scripted expert) over the command grid.
    Eval {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        expert: bool,
    },
    /// Record neuron states and emit the intensity report.
    Analyze {
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Imitation runs over topologies x seeds.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "connectome,rewired,er,mlp")]
        topologies: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Also evaluate every trained policy on the command grid.
        #[arg(long)]
        eval: bool,
        /// Stop after this many new cells; rerun to continue.
        #[arg(long)]
        max_cells: Option<usize>,
    },
}

/// Splits `--section.key=value` overrides from the arguments clap sees.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    for (i, a) in args.into_iter().enumerate() {
        let is_override = i > 0 && a.strip_prefix("--").and_then(|s| s.split_once('=')).is_some_and(|(k, _)| k.contains('.'));
        if is_override {
            overrides.push(a[2..].to_string());
        } else {
            rest.push(a);
        }
    }
    (rest, overrides)
}

/// Parses `args` (including the program name), runs the command and returns
/// what it prints.
pub fn run(args: Vec<String>) -> Result<String> {
    let (rest, overrides) = split_overrides(args);
    let cli = Cli::try_parse_from(rest).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => anyhow::Error::new(Help(e.to_string())),
        _ => usage(e.to_string()),
    })?;
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides).map_err(|e| usage(format!("{e:#}")))?;
    match cli.command {
        Cmd::Ingest { neurons, edges, out } => commands::ingest(&cfg, &neurons, &edges, &out),
        Cmd::Synth { out } => commands::synth(&cfg, &out),
        Cmd::Topology { input, mode, seed, out } => commands::topology(&cfg, &input, &mode, seed, &out),
        Cmd::MakeDataset => commands::make_dataset(&cfg),
        Cmd::TrainIl => commands::train_il_cmd(&cfg),
        Cmd::TrainRl { init, from_scratch } => commands::train_rl_cmd(&cfg, init.as_deref(), from_scratch),
        Cmd::Eval { ckpt, expert } => commands::eval_cmd(&cfg, ckpt.as_deref(), expert),
        Cmd::Analyze { ckpt } => commands::analyze_cmd(&cfg, ckpt.as_deref()),
        Cmd::Compare {
            topologies,
            seeds,
            eval,
            max_cells,
        } => {
            let topologies = topologies.iter().map(|t| Topology::parse(t)).collect::<Result<Vec<_>>>()?;
            if topologies.is_empty() || seeds.is_empty() {
                return Err(usage("compare needs at least one topology and one seed"));
            }
            let (out, table) = compare(
                &cfg,
                &CompareOptions {
                    topologies,
                    seeds,
                    eval,
                    max_cells,
                },
            )?;
            let status = if out.complete { "complete" } else { "incomplete (rerun to resume)" };
            Ok(format!(
                "{table}{} cells, {} computed now, {status}\ncurves: {}\nsummary: {}",
                out.cells.len(),
                out.computed,
                out.curves_csv.display(),
                out.summary_csv.display()
            ))
        }
    }
}

/// `--help`/`--version` output, printed with exit code 0.
#[derive(Debug)]
pub struct Help(pub String);

impl std::fmt::Display for Help {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Help {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_split_out() {
        let args = ["flygm", "--config", "a.toml", "train-il", "--il.epochs=3", "--run.name=x"]
            .map(String::from)
            .to_vec();
        let (rest, ov) = split_overrides(args);
        assert_eq!(rest, ["flygm", "--config", "a.toml", "train-il"]);
        assert_eq!(ov, ["il.epochs=3", "run.name=x"]);
    }
}
