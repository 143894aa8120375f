//! Per-run rows, per-cell aggregates and their on-disk form.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One trained model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub cell: String,
    pub model: String,
    pub rate: f64,
    pub seed: u64,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub target_ratio: Option<f64>,
    pub accuracy: f64,
    pub val_accuracy: f64,
    pub best_epoch: usize,
    pub runtime_secs: f64,
    pub n_same: usize,
    pub n_diff: usize,
    pub link_ratio: Option<f64>,
    pub fake_real_ratio: Option<f64>,
    /// Semicolon-separated values, first entry before any refinement.
    pub ratio_trace: String,
    /// Resolved configuration as `key=value` pairs.
    pub config: String,
}

impl RunRecord {
    pub fn trace(&self) -> Vec<f64> {
        self.ratio_trace
            .split(';')
            .filter(|s| !s.is_empty())
            .filter_map(|s| s.parse().ok())
            .collect()
    }

    pub fn set_trace(&mut self, trace: &[f64]) {
        self.ratio_trace = trace.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
    }
}

/// Identity of a group of runs that differ only in the seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub label: String,
    pub model: String,
    pub rate: f64,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub target_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    #[serde(flatten)]
    pub key: CellKey,
    pub planned: usize,
    pub runs: usize,
    /// `None` without runs.
    pub mean_accuracy: Option<f64>,
    /// Sample standard deviation; `None` below two runs.
    pub std_accuracy: Option<f64>,
    pub mean_link_ratio: Option<f64>,
    pub mean_fake_real_ratio: Option<f64>,
    /// Element-wise mean of the ratio traces.
    pub mean_ratio_trace: Vec<f64>,
    pub runtime_secs: f64,
    pub complete: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunRecord>,
    pub complete: bool,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn mean_of_some(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| mean(&v))
}

impl CellSummary {
    /// Aggregates `runs`, which must all belong to `key`.
    pub fn from_runs(key: CellKey, planned: usize, runs: &[RunRecord], runtime_secs: f64, error: Option<String>) -> Self {
        let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
        let traces: Vec<Vec<f64>> = runs.iter().map(RunRecord::trace).filter(|t| !t.is_empty()).collect();
        let len = traces.iter().map(Vec::len).min().unwrap_or(0);
        let mean_ratio_trace = (0..len)
            .map(|i| mean(&traces.iter().map(|t| t[i]).collect::<Vec<_>>()))
            .collect();
        CellSummary {
            key,
            planned,
            runs: runs.len(),
            mean_accuracy: (!acc.is_empty()).then(|| mean(&acc)),
            std_accuracy: (acc.len() > 1).then(|| sample_std(&acc)),
            mean_link_ratio: mean_of_some(runs.iter().map(|r| r.link_ratio)),
            mean_fake_real_ratio: mean_of_some(runs.iter().map(|r| r.fake_real_ratio)),
            mean_ratio_trace,
            runtime_secs,
            complete: error.is_none() && runs.len() == planned,
            error,
        }
    }
}

/// A run that produces one row.
pub type Task<'a> = Box<dyn Fn() -> Result<RunRecord> + Send + Sync + 'a>;

pub struct Cell<'a> {
    pub key: CellKey,
    pub tasks: Vec<Task<'a>>,
}

/// Worker count from `ROGAT_LAB_WORKERS`, defaulting to the available cores.
pub fn worker_count() -> usize {
    std::env::var("ROGAT_LAB_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run_cell(cell: &Cell<'_>, timeout: Duration) -> (Vec<RunRecord>, CellSummary) {
    let start = Instant::now();
    let mut rows = Vec::with_capacity(cell.tasks.len());
    let mut error = None;
    for task in &cell.tasks {
        if start.elapsed() > timeout {
            error = Some(format!("aborted after {:.0} s", start.elapsed().as_secs_f64()));
            break;
        }
        match task() {
            Ok(row) => rows.push(row),
            Err(e) => {
                error = Some(format!("{e:#}"));
                break;
            }
        }
    }
    if let Some(e) = &error {
        log::warn!("cell {} incomplete: {e}", cell.key.label);
    }
    let summary = CellSummary::from_runs(cell.key.clone(), cell.tasks.len(), &rows, start.elapsed().as_secs_f64(), error);
    (rows, summary)
}

/// Runs cells in parallel, seeds within a cell in order. A cell stops
/// starting new runs once it has spent `timeout`.
pub fn run_cells(command: &str, config: BTreeMap<String, String>, cells: Vec<Cell<'_>>, timeout: Duration) -> Result<Report> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .context("building worker pool")?;
    let results: Vec<(Vec<RunRecord>, CellSummary)> =
        pool.install(|| cells.par_iter().map(|c| run_cell(c, timeout)).collect());
    let mut runs = Vec::new();
    let mut summaries = Vec::with_capacity(results.len());
    for (rows, summary) in results {
        runs.extend(rows);
        summaries.push(summary);
    }
    Ok(Report {
        command: command.to_string(),
        config,
        complete: summaries.iter().all(|s| s.complete),
        cells: summaries,
        runs,
    })
}

impl Report {
    pub fn cell(&self, label: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.key.label == label)
    }

    /// Writes `runs.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut w = csv::Writer::from_path(dir.join("runs.csv"))?;
        for r in &self.runs {
            w.serialize(r)?;
        }
        w.flush()?;
        let json = serde_json::to_string_pretty(self)?;
        fs::write(dir.join("summary.json"), json)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("summary.json"))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Human-readable table of the cells.
    pub fn table(&self) -> String {
        let mut out = format!("{:<40} {:>5} {:>16} {:>10}\n", "cell", "runs", "accuracy", "fake/real");
        for c in &self.cells {
            let ratio = c.mean_fake_real_ratio.map_or("-".to_string(), |r| format!("{r:.3}"));
            let mean = c.mean_accuracy.unwrap_or(f64::NAN);
            let std = c.std_accuracy.unwrap_or(0.0);
            let flag = if c.complete { "" } else { "  INCOMPLETE" };
            out.push_str(&format!(
                "{:<40} {:>2}/{:<2} {:>7.4} ± {:<6.4} {:>10}{flag}\n",
                c.key.label, c.runs, c.planned, mean, std, ratio
            ));
        }
        out
    }
}
