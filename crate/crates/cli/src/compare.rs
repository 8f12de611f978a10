//! Imitation runs over (topology, seed) cells with merged curves and a
//! mean ± std summary. Finished cells are listed in `compare/progress.txt`
//! and skipped when the command is rerun.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use flygm::env::{CellMetrics, PolicyController};
use flygm::persistence::save_checkpoint;
use flygm::policy::Policy;
use flygm::training::{write_il_csv, IlEpoch};

use crate::commands::{evaluate_with, imitate, make_dataset};
use crate::config::RunConfig;
use crate::pipeline::{self, Topology};
use crate::run::{write_csv_file, Manifest, RunDir};

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub topology: Topology,
    pub seed: u64,
    pub curve: Vec<IlEpoch>,
    /// `(cell label, pos_err_mean)` per command, when evaluation was requested.
    pub pos_err: Vec<(String, f64)>,
}

impl CellResult {
    /// `1 - final/initial` μ-MSE.
    pub fn mu_reduction(&self) -> f64 {
        let (a, b) = (self.curve[0].mu_mse, self.curve.last().unwrap().mu_mse);
        1.0 - b / a
    }
}

#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub topologies: Vec<Topology>,
    pub seeds: Vec<u64>,
    pub eval: bool,
    /// Stop after this many newly computed cells.
    pub max_cells: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub cells: Vec<CellResult>,
    /// Cells computed by this invocation (the rest were resumed).
    pub computed: usize,
    pub complete: bool,
    pub curves_csv: PathBuf,
    pub summary_csv: PathBuf,
}

fn cell_name(t: Topology, seed: u64) -> String {
    format!("{}-s{seed}", t.as_str())
}

fn read_progress(path: &Path) -> Result<BTreeSet<String>> {
    if !path.is_file() {
        return Ok(BTreeSet::new());
    }
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn read_curve(path: &Path) -> Result<Vec<IlEpoch>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> { Ok(rec[i].parse()?) };
        out.push(IlEpoch {
            epoch: rec[0].parse()?,
            lambda: f(1)?,
            total: f(2)?,
            mu_mse: f(3)?,
            log_sigma_mse: f(4)?,
        });
    }
    Ok(out)
}

fn read_pos_err(path: &Path) -> Result<Vec<(String, f64)>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push((rec[0].to_string(), rec[1].parse()?));
    }
    Ok(out)
}

fn run_cell(
    cfg: &RunConfig,
    base: Option<&flygm::connectome::Connectome>,
    data: &flygm::env::Dataset,
    topo: Topology,
    seed: u64,
    eval: bool,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (mut policy, _) = pipeline::build_policy(cfg, base, topo, seed)?;
    let (curve, norm, opt) = imitate(cfg, &mut policy, data, seed)?;
    write_csv_file(&dir.join("il.csv"), |b| write_il_csv(&curve, b))?;
    save_checkpoint(&dir.join("policy.fgm"), policy.params(), Some(&norm), Some(&opt))?;
    if eval {
        let mut ctrl = PolicyController::new(&policy, &norm);
        let metrics: Vec<CellMetrics> = evaluate_with(cfg, &mut ctrl)?;
        write_csv_file(&dir.join("eval.csv"), |b| flygm::env::write_eval_csv(&metrics, b))?;
    }
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    (mean, (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn write_curves(path: &Path, cells: &[CellResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["topology", "seed", "epoch", "lambda", "total", "mu_mse", "log_sigma_mse"])?;
    for c in cells {
        for r in &c.curve {
            w.write_record([
                c.topology.as_str().to_string(),
                c.seed.to_string(),
                r.epoch.to_string(),
                r.lambda.to_string(),
                r.total.to_string(),
                r.mu_mse.to_string(),
                r.log_sigma_mse.to_string(),
            ])?;
        }
    }
    flygm::persistence::write_atomic(path, &w.into_inner()?)?;
    Ok(())
}

/// One row per topology: final losses, μ-MSE reduction and (optionally)
/// per-command position error, each as mean and sample std over seeds.
fn write_summary(path: &Path, topologies: &[Topology], cells: &[CellResult]) -> Result<String> {
    let labels: Vec<String> = cells
        .iter()
        .find(|c| !c.pos_err.is_empty())
        .map(|c| c.pos_err.iter().map(|p| p.0.clone()).collect())
        .unwrap_or_default();
    let mut header = vec!["topology".to_string(), "seeds".into()];
    for k in ["final_total", "final_mu_mse", "final_log_sigma_mse", "mu_mse_reduction"] {
        header.push(format!("{k}_mean"));
        header.push(format!("{k}_std"));
    }
    for l in &labels {
        header.push(format!("pos_err_{l}_mean"));
        header.push(format!("pos_err_{l}_std"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    let mut table = String::from("topology     final mu_mse            mu_mse reduction\n");
    for &t in topologies {
        let group: Vec<&CellResult> = cells.iter().filter(|c| c.topology == t).collect();
        if group.is_empty() {
            continue;
        }
        let mut row = vec![t.as_str().to_string(), group.len().to_string()];
        let cols: [fn(&CellResult) -> f64; 4] = [
            |c| c.curve.last().unwrap().total,
            |c| c.curve.last().unwrap().mu_mse,
            |c| c.curve.last().unwrap().log_sigma_mse,
            CellResult::mu_reduction,
        ];
        let stats: Vec<(f64, f64)> = cols.iter().map(|f| mean_std(&group.iter().map(|c| f(c)).collect::<Vec<_>>())).collect();
        for (m, s) in &stats {
            row.push(m.to_string());
            row.push(s.to_string());
        }
        for l in &labels {
            let xs: Vec<f64> = group.iter().filter_map(|c| c.pos_err.iter().find(|p| &p.0 == l).map(|p| p.1)).collect();
            let (m, s) = mean_std(&xs);
            row.push(m.to_string());
            row.push(s.to_string());
        }
        w.write_record(&row)?;
        table.push_str(&format!(
            "{:<11}  {:.5} ± {:.5}    {:.3} ± {:.3}\n",
            t.as_str(),
            stats[1].0,
            stats[1].1,
            stats[3].0,
            stats[3].1
        ));
    }
    flygm::persistence::write_atomic(path, &w.into_inner()?)?;
    Ok(table)
}

pub fn compare(cfg: &RunConfig, opts: &CompareOptions) -> Result<(CompareOutcome, String)> {
    let dir = RunDir::create(cfg)?;
    if !dir.dataset().is_file() {
        make_dataset(cfg)?;
    }
    let data = pipeline::load_dataset(&dir.dataset())?;
    let mut manifest = Manifest::start("compare");
    let root = dir.root.join("compare");
    fs::create_dir_all(&root)?;
    let progress_path = root.join("progress.txt");
    let done = read_progress(&progress_path)?;
    let needs_graph = opts.topologies.iter().any(|&t| t != Topology::Mlp);
    let base = if needs_graph { Some(pipeline::base_connectome(cfg)?) } else { None };

    let mut computed = 0;
    let mut complete = true;
    let mut results: HashMap<String, CellResult> = HashMap::new();
    'outer: for &t in &opts.topologies {
        for &seed in &opts.seeds {
            let name = cell_name(t, seed);
            let cell_dir = root.join(&name);
            if !done.contains(&name) {
                if opts.max_cells.is_some_and(|m| computed >= m) {
                    complete = false;
                    break 'outer;
                }
                log::info!("compare cell {name}");
                run_cell(cfg, base.as_ref(), &data, t, seed, opts.eval, &cell_dir)?;
                let mut f = fs::OpenOptions::new().create(true).append(true).open(&progress_path)?;
                writeln!(f, "{name}")?;
                computed += 1;
            }
            results.insert(
                name.clone(),
                CellResult {
                    topology: t,
                    seed,
                    curve: read_curve(&cell_dir.join("il.csv"))?,
                    pos_err: read_pos_err(&cell_dir.join("eval.csv"))?,
                },
            );
        }
    }
    let cells: Vec<CellResult> = opts
        .topologies
        .iter()
        .flat_map(|&t| opts.seeds.iter().map(move |&s| cell_name(t, s)))
        .filter_map(|n| results.remove(&n))
        .collect();
    let curves_csv = dir.metrics("compare_curves.csv");
    let summary_csv = dir.metrics("compare_summary.csv");
    write_curves(&curves_csv, &cells)?;
    let table = write_summary(&summary_csv, &opts.topologies, &cells)?;
    manifest.note("topologies", opts.topologies.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(","));
    manifest.note("seeds", opts.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
    manifest.note("cells_computed", computed);
    manifest.note("complete", complete);
    manifest.finish(&dir, cfg)?;
    Ok((
        CompareOutcome {
            cells,
            computed,
            complete,
            curves_csv,
            summary_csv,
        },
        table,
    ))
}
