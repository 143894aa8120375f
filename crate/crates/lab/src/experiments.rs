//! The experiment commands. Each builds a list of cells, runs them through
//! [`run_cells`] and returns the assembled report.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use rogat_core::gat::save_params;
use rogat_core::graph::{link_ratio, random_split, save_edge_list, sbm_generate};
use rogat_core::{apply_perturbation, train_gat, train_rogat, Graph, Perturbation, Scalar};

use crate::config::{ExperimentConfig, ModelKind, Precision};
use crate::data::{load_dataset, perturbation, prepare};
use crate::report::{run_cells, Cell, CellKey, Report, RunRecord, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    RatioExperiment,
    DefenseSweep,
    Ablation,
    HyperSweep,
    RatioTrack,
    Train,
    Attack,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::RatioExperiment,
        Command::DefenseSweep,
        Command::Ablation,
        Command::HyperSweep,
        Command::RatioTrack,
        Command::Train,
        Command::Attack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::RatioExperiment => "ratio-experiment",
            Command::DefenseSweep => "defense-sweep",
            Command::Ablation => "ablation",
            Command::HyperSweep => "hyper-sweep",
            Command::RatioTrack => "ratio-track",
            Command::Train => "train",
            Command::Attack => "attack",
        }
    }
}

impl FromStr for Command {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .with_context(|| format!("unknown command '{s}'"))
    }
}

impl Display for Command {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Loads the configured dataset at the configured precision and runs `command`.
pub fn run_command(command: Command, cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => run_typed::<f32>(command, cfg),
        Precision::F64 => run_typed::<f64>(command, cfg),
    }
}

fn run_typed<T: Scalar>(command: Command, cfg: &ExperimentConfig) -> Result<Report> {
    if command == Command::RatioExperiment {
        return ratio_experiment::<T>(cfg);
    }
    let clean = load_dataset::<T>(cfg)?;
    log::info!("{}: {} nodes, {} edges", cfg.dataset.display(), clean.n_nodes(), clean.n_edges());
    match command {
        Command::RatioExperiment => unreachable!(),
        Command::DefenseSweep => defense_sweep(&clean, cfg),
        Command::Ablation => ablation(&clean, cfg),
        Command::HyperSweep => hyper_sweep(&clean, cfg),
        Command::RatioTrack => ratio_track(&clean, cfg),
        Command::Train => train(&clean, cfg),
        Command::Attack => attack(&clean, cfg),
    }
}

/// Outcome of one trained model.
struct Outcome {
    accuracy: f64,
    val_accuracy: f64,
    best_epoch: usize,
    fake_real_ratio: Option<f64>,
    trace: Vec<f64>,
}

/// Trains `cfg.models[0]` on an already split graph.
fn fit<T: Scalar>(g: &Graph<T>, cfg: &ExperimentConfig, seed: u64, p: &Perturbation, save: Option<&Path>) -> Result<Outcome> {
    let kind = cfg.models[0];
    if kind == ModelKind::Gat {
        let run = train_gat(g, &cfg.gat_config(seed))?;
        if let Some(dir) = save {
            save_params(&run.params, dir.join("params.bin"))?;
        }
        return Ok(Outcome {
            accuracy: run.eval.test_acc,
            val_accuracy: run.eval.val_acc,
            best_epoch: run.best_epoch,
            fake_real_ratio: None,
            trace: Vec::new(),
        });
    }
    let mut rcfg = cfg.rogat_config(seed);
    rcfg.enable_structure = kind != ModelKind::RogatNoStructure;
    rcfg.enable_feature = kind != ModelKind::RogatNoFeature;
    let tracked = (!p.added.is_empty()).then_some(p);
    let run = train_rogat(g, &rcfg, tracked)?;
    if let Some(dir) = save {
        save_params(&run.params, dir.join("params.bin"))?;
        run.state.export(dir.join("a_bar.csv"), dir.join("x_bar.csv"))?;
    }
    Ok(Outcome {
        accuracy: run.eval.test_acc,
        val_accuracy: run.eval.val_acc,
        best_epoch: run.best_epoch,
        fake_real_ratio: run.ratio_trace.last().copied(),
        trace: run.ratio_trace,
    })
}

fn record(command: Command, key: &CellKey, cell_cfg: &ExperimentConfig, seed: u64, started: Instant) -> RunRecord {
    RunRecord {
        command: command.name().into(),
        cell: key.label.clone(),
        model: key.model.clone(),
        rate: key.rate,
        seed,
        alpha: key.alpha,
        lambda: key.lambda,
        target_ratio: key.target_ratio,
        runtime_secs: started.elapsed().as_secs_f64(),
        config: cell_cfg.to_line(),
        ..Default::default()
    }
}

/// One cell: `cell_cfg.models[0]` at `cell_cfg.rate` on the dataset, one
/// task per seed. Perturbations depend on (rate, seed) only, so cells that
/// differ in the model see identical poisoned graphs.
fn dataset_cell<'a, T: Scalar>(
    command: Command,
    clean: &'a Graph<T>,
    key: CellKey,
    cell_cfg: ExperimentConfig,
    save_root: Option<&'a Path>,
) -> Cell<'a> {
    let cell_cfg = std::sync::Arc::new(cell_cfg);
    let tasks = cell_cfg
        .seeds()
        .map(|seed| {
            let (key, cfg) = (key.clone(), cell_cfg.clone());
            let task: Task<'a> = Box::new(move || {
                let started = Instant::now();
                let prepared = prepare(clean, &cfg, cfg.rate, seed)?;
                let save = match save_root {
                    Some(root) => {
                        let dir = root.join(format!("seed-{seed}"));
                        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                        Some(dir)
                    }
                    None => None,
                };
                let out = fit(&prepared.graph, &cfg, seed, &prepared.perturbation, save.as_deref())
                    .with_context(|| format!("{} seed {seed}", key.label))?;
                let mut row = record(command, &key, &cfg, seed, started);
                row.accuracy = out.accuracy;
                row.val_accuracy = out.val_accuracy;
                row.best_epoch = out.best_epoch;
                row.n_same = prepared.stats.n_same;
                row.n_diff = prepared.stats.n_diff;
                row.link_ratio = prepared.stats.ratio;
                row.fake_real_ratio = out.fake_real_ratio;
                row.set_trace(&out.trace);
                log::info!("{} seed {seed}: accuracy {:.4}", key.label, row.accuracy);
                Ok(row)
            });
            task
        })
        .collect();
    Cell { key, tasks }
}

fn model_cell_config(cfg: &ExperimentConfig, model: ModelKind, rate: f64) -> ExperimentConfig {
    ExperimentConfig {
        models: vec![model],
        rate,
        ..cfg.clone()
    }
}

fn timeout(cfg: &ExperimentConfig) -> Duration {
    Duration::from_secs_f64(cfg.cell_timeout_secs)
}

fn rate_by_model<T: Scalar>(command: Command, clean: &Graph<T>, cfg: &ExperimentConfig, models: &[ModelKind]) -> Result<Report> {
    let mut cells = Vec::new();
    for &rate in &cfg.rates {
        for &model in models {
            let key = CellKey {
                label: format!("rate={rate} model={model}"),
                model: model.name().into(),
                rate,
                ..Default::default()
            };
            cells.push(dataset_cell(command, clean, key, model_cell_config(cfg, model, rate), None));
        }
    }
    run_cells(command.name(), cfg.to_map(), cells, timeout(cfg))
}

/// Accuracy per (rate, model) with paired perturbations.
pub fn defense_sweep<T: Scalar>(clean: &Graph<T>, cfg: &ExperimentConfig) -> Result<Report> {
    rate_by_model(Command::DefenseSweep, clean, cfg, &cfg.models)
}

/// Full model against the two single-step ablations across `rates`.
pub fn ablation<T: Scalar>(clean: &Graph<T>, cfg: &ExperimentConfig) -> Result<Report> {
    rate_by_model(Command::Ablation, clean, cfg, &ModelKind::ABLATIONS)
}

/// Accuracy over the λ × α grid at `cfg.rate`, with `γ` tied to `α`, plus
/// a plain GAT reference cell.
pub fn hyper_sweep<T: Scalar>(clean: &Graph<T>, cfg: &ExperimentConfig) -> Result<Report> {
    let rate = cfg.rate;
    let mut cells = vec![dataset_cell(
        Command::HyperSweep,
        clean,
        CellKey {
            label: "reference model=gat".into(),
            model: "gat".into(),
            rate,
            ..Default::default()
        },
        model_cell_config(cfg, ModelKind::Gat, rate),
        None,
    )];
    for &lambda in &cfg.grid_lambda {
        for &alpha in &cfg.grid_alpha {
            let mut cell_cfg = model_cell_config(cfg, ModelKind::Rogat, rate);
            cell_cfg.rogat.lambda = lambda;
            cell_cfg.rogat.alpha = alpha;
            cell_cfg.rogat.gamma = alpha;
            let key = CellKey {
                label: format!("lambda={lambda} alpha={alpha}"),
                model: "rogat".into(),
                rate,
                alpha: Some(alpha),
                lambda: Some(lambda),
                ..Default::default()
            };
            cells.push(dataset_cell(Command::HyperSweep, clean, key, cell_cfg, None));
        }
    }
    run_cells(Command::HyperSweep.name(), cfg.to_map(), cells, timeout(cfg))
}

/// Fake/real weight ratio traces of the full model at `track_rates`.
pub fn ratio_track<T: Scalar>(clean: &Graph<T>, cfg: &ExperimentConfig) -> Result<Report> {
    if cfg.track_rates.iter().any(|&r| r <= 0.0) {
        bail!("ratio tracking needs positive rates");
    }
    let cfg = ExperimentConfig {
        rates: cfg.track_rates.clone(),
        ..cfg.clone()
    };
    rate_by_model(Command::RatioTrack, clean, &cfg, &[ModelKind::Rogat])
}

/// `models[0]` at `rate`, one run per seed. With `save_model` the
/// parameters (and the revised graph for the refined variants) go to
/// `output/train/seed-<s>/`.
pub fn train<T: Scalar>(clean: &Graph<T>, cfg: &ExperimentConfig) -> Result<Report> {
    let model = cfg.models[0];
    let key = CellKey {
        label: format!("rate={} model={model}", cfg.rate),
        model: model.name().into(),
        rate: cfg.rate,
        ..Default::default()
    };
    let save_root = cfg.output.join(Command::Train.name());
    let save = cfg.save_model.then_some(save_root.as_path());
    let cell = dataset_cell(Command::Train, clean, key, model_cell_config(cfg, model, cfg.rate), save);
    run_cells(Command::Train.name(), cfg.to_map(), vec![cell], timeout(cfg))
}

/// Writes `perturbation-seed<s>.json` and the poisoned edge list
/// `poisoned-seed<s>.csv` for every seed into `output/attack/`. The report
/// has no cells.
pub fn attack<T: Scalar>(clean: &Graph<T>, cfg: &ExperimentConfig) -> Result<Report> {
    let dir = cfg.output.join(Command::Attack.name());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for seed in cfg.seeds() {
        let p = if cfg.rate == 0.0 {
            Perturbation { seed, ..Default::default() }
        } else {
            perturbation(clean, cfg, cfg.rate, seed)?
        };
        p.save(dir.join(format!("perturbation-seed{seed}.json")))?;
        let poisoned = apply_perturbation(clean, &p)?;
        save_edge_list(&poisoned, dir.join(format!("poisoned-seed{seed}.csv")))?;
        let stats = link_ratio(&poisoned)?;
        log::info!(
            "seed {seed}: +{} -{} edges, same/diff {}/{}",
            p.added.len(),
            p.removed.len(),
            stats.n_same,
            stats.n_diff
        );
    }
    Ok(Report {
        command: Command::Attack.name().into(),
        config: cfg.to_map(),
        cells: Vec::new(),
        runs: Vec::new(),
        complete: true,
    })
}

/// GAT accuracy on block-model graphs calibrated to each target
/// same/different link ratio. Seed `s` draws both the graph and the split.
pub fn ratio_experiment<T: Scalar>(cfg: &ExperimentConfig) -> Result<Report> {
    let mut cells = Vec::new();
    for &ratio in &cfg.sbm_ratios {
        let spec = cfg.sbm.clone().with_target_ratio(ratio, cfg.sbm_diff_edges)?;
        let key = CellKey {
            label: format!("ratio={ratio}"),
            model: "gat".into(),
            target_ratio: Some(ratio),
            ..Default::default()
        };
        let tasks = cfg
            .seeds()
            .map(|seed| {
                let (spec, key) = (spec.clone(), key.clone());
                let task: Task = Box::new(move || {
                    let started = Instant::now();
                    let g = sbm_generate::<T>(&rogat_core::SbmSpec { seed, ..spec.clone() })?;
                    let stats = link_ratio(&g)?;
                    let g = random_split(&g, cfg.train_frac, cfg.val_frac, seed)?;
                    let run = train_gat(&g, &cfg.gat_config(seed))?;
                    let mut row = record(Command::RatioExperiment, &key, cfg, seed, started);
                    row.accuracy = run.eval.test_acc;
                    row.val_accuracy = run.eval.val_acc;
                    row.best_epoch = run.best_epoch;
                    row.n_same = stats.n_same;
                    row.n_diff = stats.n_diff;
                    row.link_ratio = stats.ratio;
                    Ok(row)
                });
                task
            })
            .collect();
        cells.push(Cell { key, tasks });
    }
    run_cells(Command::RatioExperiment.name(), cfg.to_map(), cells, timeout(cfg))
}
