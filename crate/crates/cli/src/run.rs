//! Run directory layout and the manifest.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use anyhow::{Context, Result};

use crate::config::RunConfig;

/// `out/<run>/{manifest.txt, config.resolved, metrics/, ckpt/, report/, data/}`.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(cfg: &RunConfig) -> Result<Self> {
        let root = cfg.run_dir();
        for sub in ["metrics", "ckpt", "report", "data"] {
            fs::create_dir_all(root.join(sub)).with_context(|| format!("cannot create {}", root.join(sub).display()))?;
        }
        fs::write(root.join("config.resolved"), cfg.to_toml()).context("cannot write config.resolved")?;
        Ok(RunDir { root })
    }

    pub fn metrics(&self, name: &str) -> PathBuf {
        self.root.join("metrics").join(name)
    }

    pub fn ckpt(&self, name: &str) -> PathBuf {
        self.root.join("ckpt").join(name)
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("data").join("dataset.fgd")
    }
}

/// `git describe` of the working directory, or `unknown` outside a repository.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Appends one block per command to `manifest.txt`.
pub struct Manifest {
    command: String,
    started: Instant,
    extra: Vec<(String, String)>,
}

impl Manifest {
    pub fn start(command: &str) -> Self {
        Manifest {
            command: command.into(),
            started: Instant::now(),
            extra: Vec::new(),
        }
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.extra.push((key.into(), value.to_string()));
    }

    pub fn finish(self, dir: &RunDir, cfg: &RunConfig) -> Result<()> {
        let mut text = String::new();
        let _ = writeln!(text, "[{}]", self.command);
        let _ = writeln!(text, "seed = {}", cfg.run.seed);
        let _ = writeln!(text, "git = {}", git_describe());
        let _ = writeln!(text, "wall_time_s = {:.3}", self.started.elapsed().as_secs_f64());
        for (k, v) in &self.extra {
            let _ = writeln!(text, "{k} = {v}");
        }
        let _ = writeln!(text, "config:");
        for line in cfg.to_toml().lines() {
            let _ = writeln!(text, "  {line}");
        }
        text.push('\n');
        let path = dir.root.join("manifest.txt");
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("cannot open {}", path.display()))?;
        f.write_all(text.as_bytes())?;
        Ok(())
    }
}

pub fn write_csv_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> flygm::Result<()>) -> Result<()> {
    let mut bytes = Vec::new();
    f(&mut bytes)?;
    flygm::persistence::write_atomic(path, &bytes)?;
    Ok(())
}
