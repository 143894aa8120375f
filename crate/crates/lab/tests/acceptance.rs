//! Acceptance run: one line per criterion, `PASS`, `FAIL` or `SKIP`.
//!
//! `ROGAT_ACCEPTANCE_ONLY=C2,C6` restricts the run. Criteria listed in
//! [`EXPECTED_FAIL`] are still evaluated at full tolerance and reported as
//! failing, but only break the target under `ROGAT_ACCEPTANCE_STRICT=1`; an
//! unexpected pass of one of them does break it. `ROGAT_POISONED_CORA`
//! points C5 at a poisoned Cora edge list.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{ensure, Result};
use rogat_lab::data::load_dataset;
use rogat_lab::experiments::{ablation, defense_sweep, ratio_experiment, ratio_track};
use rogat_lab::{AttackKind, ExperimentConfig, ModelKind, Report};

macro_rules! register {
    ($($name:ident),* $(,)?) => {
        pub const SUITE: &[(&str, fn())] = &[$((stringify!($name), $name)),*];
    };
}

#[path = "../../core/tests/suites/gradients.rs"]
mod gradients;
#[path = "../../core/tests/suites/invariants.rs"]
mod invariants;

/// Measured shortfall; see the project notes on the refinement ceiling
/// under balanced DICE.
const EXPECTED_FAIL: &[&str] = &["C4"];

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Line {
    id: &'static str,
    verdict: Verdict,
    detail: String,
}

fn base_config(tmp: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        dataset: PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/cora"),
        output: tmp.to_path_buf(),
        n_seeds: 10,
        ..Default::default()
    }
}

fn mean_acc(report: &Report, label: &str) -> Result<f64> {
    let cell = report.cell(label).ok_or_else(|| anyhow::anyhow!("missing cell {label}"))?;
    ensure!(cell.complete, "cell {label} incomplete: {:?}", cell.error);
    cell.mean_accuracy.ok_or_else(|| anyhow::anyhow!("cell {label} has no runs"))
}

/// Runs `check` with a wall-clock budget; the check returns whether its
/// tolerance held and a description of the measured values.
fn criterion(id: &'static str, budget_secs: f64, check: impl FnOnce() -> Result<(bool, String)>) -> Line {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(check));
    let secs = start.elapsed().as_secs_f64();
    let (ok, detail) = match outcome {
        Ok(Ok((ok, detail))) => (ok, detail),
        Ok(Err(e)) => (false, format!("error: {e:#}")),
        Err(_) => (false, "panicked".into()),
    };
    let in_time = secs <= budget_secs;
    let timing = format!("{secs:.1} s of {budget_secs:.0} s{}", if in_time { "" } else { ", over budget" });
    Line {
        id,
        verdict: if ok && in_time { Verdict::Pass } else { Verdict::Fail },
        detail: format!("{detail} [{timing}]"),
    }
}

fn run_suite(suite: &[(&str, fn())]) -> Result<(bool, String)> {
    let failed: Vec<&str> = suite
        .iter()
        .filter(|(_, f)| catch_unwind(*f).is_err())
        .map(|(name, _)| *name)
        .collect();
    let detail = if failed.is_empty() {
        format!("{} checks passed", suite.len())
    } else {
        format!("failed: {}", failed.join(", "))
    };
    Ok((failed.is_empty(), detail))
}

fn c2(cfg: &ExperimentConfig) -> Result<(bool, String)> {
    let report = ratio_experiment::<f64>(cfg)?;
    let accs: Vec<f64> = cfg
        .sbm_ratios
        .iter()
        .map(|r| mean_acc(&report, &format!("ratio={r}")))
        .collect::<Result<_>>()?;
    ensure!(cfg.sbm_ratios == [1.0, 2.0, 3.0, 4.0], "unexpected ratio list");
    let low = (0.42..=0.62).contains(&accs[0]);
    let high = accs[3] >= 0.95;
    let monotone = accs.windows(2).all(|w| w[1] >= w[0] - 0.03);
    let shown: Vec<String> = accs.iter().map(|a| format!("{a:.4}")).collect();
    Ok((
        low && high && monotone,
        format!("GAT accuracy at ratios 1..4: {}", shown.join(", ")),
    ))
}

fn c3(cfg: &ExperimentConfig) -> Result<(bool, String)> {
    let cfg = ExperimentConfig {
        rates: vec![0.0],
        models: vec![ModelKind::Gat, ModelKind::Rogat],
        ..cfg.clone()
    };
    let report = defense_sweep::<f64>(&load_dataset::<f64>(&cfg)?, &cfg)?;
    let gat = mean_acc(&report, "rate=0 model=gat")?;
    let rogat = mean_acc(&report, "rate=0 model=rogat")?;
    let near = |a: f64| (a - 0.84).abs() <= 0.02;
    Ok((near(gat) && near(rogat), format!("clean GAT {gat:.4}, RoGAT {rogat:.4}")))
}

fn c4(cfg: &ExperimentConfig) -> Result<(bool, String)> {
    let cfg = ExperimentConfig {
        rates: vec![0.25],
        models: vec![ModelKind::Gat, ModelKind::Rogat],
        ..cfg.clone()
    };
    let report = defense_sweep::<f64>(&load_dataset::<f64>(&cfg)?, &cfg)?;
    let gat = mean_acc(&report, "rate=0.25 model=gat")?;
    let rogat = mean_acc(&report, "rate=0.25 model=rogat")?;
    let gap = 100.0 * (rogat - gat);
    Ok((
        gap >= 5.0,
        format!("DICE 25%: GAT {gat:.4}, RoGAT {rogat:.4}, gap {gap:.2} points"),
    ))
}

fn c5(cfg: &ExperimentConfig, path: PathBuf) -> Result<(bool, String)> {
    let cfg = ExperimentConfig {
        attack: AttackKind::File,
        poisoned_edges: Some(path),
        rates: vec![0.25],
        models: vec![ModelKind::Rogat],
        ..cfg.clone()
    };
    cfg.validate()?;
    let report = defense_sweep::<f64>(&load_dataset::<f64>(&cfg)?, &cfg)?;
    let acc = mean_acc(&report, "rate=0.25 model=rogat")?;
    Ok(((acc - 0.7899).abs() <= 0.03, format!("RoGAT on supplied graph {acc:.4}")))
}

fn c6(cfg: &ExperimentConfig) -> Result<(bool, String)> {
    let cfg = ExperimentConfig {
        n_seeds: 5,
        track_rates: vec![0.05, 0.10, 0.15, 0.25],
        ..cfg.clone()
    };
    ensure!(cfg.rogat.t1 == 10, "expected ten outer iterations");
    let report = ratio_track::<f64>(&load_dataset::<f64>(&cfg)?, &cfg)?;
    let starts_at_one = report.runs.iter().all(|r| r.trace().first() == Some(&1.0));
    let lengths_ok = report.runs.iter().all(|r| r.trace().len() == cfg.rogat.t1 + 1);
    let mut finals = Vec::new();
    for &rate in &cfg.track_rates {
        let cell = report
            .cell(&format!("rate={rate} model=rogat"))
            .ok_or_else(|| anyhow::anyhow!("missing cell at {rate}"))?;
        ensure!(cell.complete, "cell at {rate} incomplete");
        finals.push(*cell.mean_ratio_trace.last().ok_or_else(|| anyhow::anyhow!("empty trace"))?);
    }
    let at_ten = finals[1] < 0.9;
    let ordered = finals.windows(2).all(|w| w[0] <= w[1]);
    let shown: Vec<String> = cfg
        .track_rates
        .iter()
        .zip(&finals)
        .map(|(r, f)| format!("{r}: {f:.3}"))
        .collect();
    Ok((
        starts_at_one && lengths_ok && at_ten && ordered,
        format!("traces start at 1: {starts_at_one}; final ratios {}", shown.join(", ")),
    ))
}

fn c7(cfg: &ExperimentConfig) -> Result<(bool, String)> {
    let cfg = ExperimentConfig {
        rates: vec![0.15, 0.25],
        ..cfg.clone()
    };
    let report = ablation::<f64>(&load_dataset::<f64>(&cfg)?, &cfg)?;
    let mut ok = true;
    let mut shown = Vec::new();
    for &rate in &cfg.rates {
        let acc = |m: ModelKind| mean_acc(&report, &format!("rate={rate} model={m}"));
        let full = acc(ModelKind::Rogat)?;
        let no_s = acc(ModelKind::RogatNoStructure)?;
        let no_f = acc(ModelKind::RogatNoFeature)?;
        ok &= full >= no_s && full >= no_f;
        shown.push(format!("{rate}: full {full:.4}, no-structure {no_s:.4}, no-feature {no_f:.4}"));
    }
    Ok((ok, shown.join("; ")))
}

fn main() -> ExitCode {
    let only: Option<Vec<String>> = std::env::var("ROGAT_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_uppercase()).collect());
    let strict = std::env::var("ROGAT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let wanted = |id: &str| only.as_ref().is_none_or(|o| o.iter().any(|x| x == id));
    let tmp = tempfile::tempdir().expect("temporary directory");
    let cfg = base_config(tmp.path());

    let mut lines = Vec::new();
    if wanted("C1") {
        lines.push(criterion("C1", 60.0, || run_suite(gradients::SUITE)));
    }
    if wanted("C2") {
        lines.push(criterion("C2", 600.0, || c2(&cfg)));
    }
    if wanted("C3") {
        lines.push(criterion("C3", 900.0, || c3(&cfg)));
    }
    if wanted("C4") {
        lines.push(criterion("C4", 1800.0, || c4(&cfg)));
    }
    if wanted("C5") {
        lines.push(match std::env::var_os("ROGAT_POISONED_CORA") {
            Some(path) => criterion("C5", 1800.0, || c5(&cfg, PathBuf::from(path))),
            None => Line {
                id: "C5",
                verdict: Verdict::Skip,
                detail: "ROGAT_POISONED_CORA not set".into(),
            },
        });
    }
    if wanted("C6") {
        lines.push(criterion("C6", 1200.0, || c6(&cfg)));
    }
    if wanted("C7") {
        lines.push(criterion("C7", 1800.0, || c7(&cfg)));
    }
    if wanted("C8") {
        lines.push(criterion("C8", 120.0, || run_suite(invariants::SUITE)));
    }

    let mut broken = false;
    println!();
    for line in &lines {
        let expected = EXPECTED_FAIL.contains(&line.id);
        let tag = match (&line.verdict, expected) {
            (Verdict::Pass, false) => "PASS",
            (Verdict::Pass, true) => {
                broken = true;
                "PASS (listed as expected failure)"
            }
            (Verdict::Fail, false) => {
                broken = true;
                "FAIL"
            }
            (Verdict::Fail, true) => {
                broken |= strict;
                "FAIL (expected)"
            }
            (Verdict::Skip, _) => "SKIP",
        };
        println!("{} {tag} {}", line.id, line.detail);
    }
    if broken {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
