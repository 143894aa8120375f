//! Flat `key = value` experiment configuration.
//!
//! Files hold one assignment per line; `#` starts a comment. Command-line
//! `--set key=value` pairs are applied on top, in order. Unknown keys are
//! rejected so that typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use rogat_core::attacks::DiceMode;
use rogat_core::rogat::RogatConfig;
use rogat_core::{FeatureNorm, GatConfig, SbmSpec, WeightDecay};

/// Model variants a sweep can train.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Gat,
    Rogat,
    RogatNoStructure,
    RogatNoFeature,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gat => "gat",
            ModelKind::Rogat => "rogat",
            ModelKind::RogatNoStructure => "rogat-no-structure",
            ModelKind::RogatNoFeature => "rogat-no-feature",
        }
    }

    pub const ABLATIONS: [ModelKind; 3] = [ModelKind::Rogat, ModelKind::RogatNoStructure, ModelKind::RogatNoFeature];
}

impl FromStr for ModelKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gat" => ModelKind::Gat,
            "rogat" => ModelKind::Rogat,
            "rogat-no-structure" => ModelKind::RogatNoStructure,
            "rogat-no-feature" => ModelKind::RogatNoFeature,
            other => bail!("unknown model '{other}'"),
        })
    }
}

impl Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Source of the perturbation applied at each (rate, seed).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackKind {
    Dice(DiceMode),
    Random,
    RandomFlip,
    /// A poisoned edge list read from `poisoned_edges`; rate is ignored.
    File,
}

impl FromStr for AttackKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dice" => AttackKind::Dice(DiceMode::Balanced),
            "dice-add-only" => AttackKind::Dice(DiceMode::AddOnly),
            "random" => AttackKind::Random,
            "random-flip" => AttackKind::RandomFlip,
            "file" => AttackKind::File,
            other => bail!("unknown attack '{other}'"),
        })
    }
}

impl Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackKind::Dice(DiceMode::Balanced) => "dice",
            AttackKind::Dice(DiceMode::AddOnly) => "dice-add-only",
            AttackKind::Random => "random",
            AttackKind::RandomFlip => "random-flip",
            AttackKind::File => "file",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => bail!("unknown precision '{other}'"),
        }
    }
}

/// Everything an experiment command needs, fully resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// LINQS directory (`*.content` + `*.cites`) or a CSV graph directory.
    pub dataset: PathBuf,
    pub feature_norm: FeatureNorm,
    pub largest_component: bool,
    pub train_frac: f64,
    pub val_frac: f64,
    pub precision: Precision,
    pub attack: AttackKind,
    pub poisoned_edges: Option<PathBuf>,
    /// Single rate used by `train`, `attack` and `hyper-sweep`.
    pub rate: f64,
    /// Rates swept by `defense-sweep` and `ablation`.
    pub rates: Vec<f64>,
    /// Rates traced by `ratio-track`.
    pub track_rates: Vec<f64>,
    pub models: Vec<ModelKind>,
    pub n_seeds: usize,
    pub seed_offset: u64,
    pub output: PathBuf,
    pub cell_timeout_secs: f64,
    /// Write the trained parameters and revised state (`train` only).
    pub save_model: bool,
    pub gat: GatConfig,
    pub rogat: RogatConfig,
    pub sbm: SbmSpec,
    pub sbm_ratios: Vec<f64>,
    /// Expected number of different-label SBM edges.
    pub sbm_diff_edges: f64,
    pub grid_lambda: Vec<f64>,
    /// Values shared by `alpha` and `gamma` in `hyper-sweep`.
    pub grid_alpha: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let grid = vec![0.1, 0.2, 0.4, 0.8, 1.6, 3.2, 6.4];
        ExperimentConfig {
            dataset: PathBuf::from("data/cora"),
            feature_norm: FeatureNorm::None,
            largest_component: true,
            train_frac: 0.1,
            val_frac: 0.1,
            precision: Precision::F64,
            attack: AttackKind::Dice(DiceMode::Balanced),
            poisoned_edges: None,
            rate: 0.25,
            rates: vec![0.0, 0.05, 0.10, 0.15, 0.20, 0.25],
            track_rates: vec![0.05, 0.15, 0.25],
            models: vec![ModelKind::Gat, ModelKind::Rogat],
            n_seeds: 10,
            seed_offset: 0,
            output: PathBuf::from("results"),
            cell_timeout_secs: 600.0,
            save_model: false,
            gat: GatConfig::default(),
            rogat: RogatConfig::default(),
            sbm: SbmSpec::default(),
            sbm_ratios: vec![1.0, 2.0, 3.0, 4.0],
            sbm_diff_edges: 2000.0,
            grid_lambda: grid.clone(),
            grid_alpha: grid,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| anyhow!("{key} = '{value}': {e}"))
}

fn parse_list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>>
where
    V::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<V: Display>(values: &[V]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn norm_name(n: FeatureNorm) -> &'static str {
    match n {
        FeatureNorm::None => "none",
        FeatureNorm::Row => "row",
        FeatureNorm::L2 => "l2",
    }
}

impl ExperimentConfig {
    /// Applies one assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "dataset" => self.dataset = PathBuf::from(v),
            "feature_norm" => self.feature_norm = v.parse()?,
            "largest_component" => self.largest_component = parse(key, v)?,
            "train_frac" => self.train_frac = parse(key, v)?,
            "val_frac" => self.val_frac = parse(key, v)?,
            "precision" => self.precision = v.parse()?,
            "attack" => self.attack = v.parse()?,
            "poisoned_edges" => self.poisoned_edges = (!v.is_empty()).then(|| PathBuf::from(v)),
            "rate" => self.rate = parse(key, v)?,
            "rates" => self.rates = parse_list(key, v)?,
            "track_rates" => self.track_rates = parse_list(key, v)?,
            "models" => self.models = parse_list(key, v)?,
            "n_seeds" => self.n_seeds = parse(key, v)?,
            "seed_offset" => self.seed_offset = parse(key, v)?,
            "output" => self.output = PathBuf::from(v),
            "cell_timeout_secs" => self.cell_timeout_secs = parse(key, v)?,
            "save_model" => self.save_model = parse(key, v)?,
            "gat.heads" => {
                self.gat.heads = parse_list(key, v)?;
                self.gat.n_layers = self.gat.heads.len();
            }
            "gat.hidden_dim" => self.gat.hidden_dim = parse(key, v)?,
            "gat.dropout" => self.gat.dropout = parse(key, v)?,
            "gat.negative_slope" => self.gat.negative_slope = parse(key, v)?,
            "gat.lr" => self.gat.lr = parse(key, v)?,
            "gat.weight_decay" => self.gat.weight_decay = parse(key, v)?,
            "gat.decay_mode" => {
                self.gat.decay_mode = match v {
                    "l2" => WeightDecay::L2,
                    "decoupled" => WeightDecay::Decoupled,
                    other => bail!("unknown decay mode '{other}'"),
                }
            }
            "gat.epochs" => self.gat.epochs = parse(key, v)?,
            "gat.patience" => self.gat.patience = parse(key, v)?,
            "gat.self_loops" => self.gat.self_loops = parse(key, v)?,
            "rogat.alpha" => self.rogat.alpha = parse(key, v)?,
            "rogat.beta" => self.rogat.beta = parse(key, v)?,
            "rogat.gamma" => self.rogat.gamma = parse(key, v)?,
            "rogat.lambda" => self.rogat.lambda = parse(key, v)?,
            "rogat.eta1" => self.rogat.eta1 = parse(key, v)?,
            "rogat.eta2" => self.rogat.eta2 = parse(key, v)?,
            "rogat.t1" => self.rogat.t1 = parse(key, v)?,
            "rogat.t2" => self.rogat.t2 = parse(key, v)?,
            "sbm.n_nodes" => self.sbm.n_nodes = parse(key, v)?,
            "sbm.n_classes" => self.sbm.n_classes = parse(key, v)?,
            "sbm.feature_dim" => self.sbm.feature_dim = parse(key, v)?,
            "sbm.feature_signal" => self.sbm.feature_signal = parse(key, v)?,
            "sbm.ratios" => self.sbm_ratios = parse_list(key, v)?,
            "sbm.diff_edges" => self.sbm_diff_edges = parse(key, v)?,
            "grid.lambda" => self.grid_lambda = parse_list(key, v)?,
            "grid.alpha" => self.grid_alpha = parse_list(key, v)?,
            other => bail!("unknown configuration key '{other}'"),
        }
        Ok(())
    }

    /// Applies a `key=value` string.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key=value, got '{pair}'"))?;
        self.set(k, v)
    }

    /// Defaults, then the file (if any), then the overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text)
                .with_context(|| format!("in {}", path.display()))?;
        }
        for pair in overrides {
            cfg.set_pair(pair)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            bail!("n_seeds must be at least 1");
        }
        if !(self.cell_timeout_secs > 0.0) {
            bail!("cell_timeout_secs must be positive");
        }
        let rate_ok = |r: &f64| (0.0..=1.0).contains(r);
        if !rate_ok(&self.rate) || !self.rates.iter().chain(&self.track_rates).all(rate_ok) {
            bail!("perturbation rates must lie in [0, 1]");
        }
        if self.attack == AttackKind::File {
            match &self.poisoned_edges {
                None => bail!("attack = file needs poisoned_edges"),
                Some(p) if !p.is_file() => bail!("poisoned_edges {} does not exist", p.display()),
                Some(_) => {}
            }
        }
        if self.models.is_empty() {
            bail!("models must not be empty");
        }
        self.rogat_config(0).validate()?;
        self.sbm.validate()?;
        Ok(())
    }

    /// Inner network configuration for one seed.
    pub fn gat_config(&self, seed: u64) -> GatConfig {
        GatConfig {
            seed,
            ..self.gat.clone()
        }
    }

    /// Refinement configuration for one seed; the inner network settings
    /// come from the `gat.*` keys.
    pub fn rogat_config(&self, seed: u64) -> RogatConfig {
        RogatConfig {
            gat: self.gat_config(seed),
            ..self.rogat.clone()
        }
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.n_seeds as u64).map(move |s| self.seed_offset + s)
    }

    /// Every key with its resolved value.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let g = &self.gat;
        let r = &self.rogat;
        let entries: Vec<(&str, String)> = vec![
            ("dataset", self.dataset.display().to_string()),
            ("feature_norm", norm_name(self.feature_norm).into()),
            ("largest_component", self.largest_component.to_string()),
            ("train_frac", self.train_frac.to_string()),
            ("val_frac", self.val_frac.to_string()),
            (
                "precision",
                match self.precision {
                    Precision::F32 => "f32".into(),
                    Precision::F64 => "f64".into(),
                },
            ),
            ("attack", self.attack.to_string()),
            (
                "poisoned_edges",
                self.poisoned_edges
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("rate", self.rate.to_string()),
            ("rates", join(&self.rates)),
            ("track_rates", join(&self.track_rates)),
            ("models", join(&self.models)),
            ("n_seeds", self.n_seeds.to_string()),
            ("seed_offset", self.seed_offset.to_string()),
            ("output", self.output.display().to_string()),
            ("cell_timeout_secs", self.cell_timeout_secs.to_string()),
            ("save_model", self.save_model.to_string()),
            ("gat.heads", join(&g.heads)),
            ("gat.hidden_dim", g.hidden_dim.to_string()),
            ("gat.dropout", g.dropout.to_string()),
            ("gat.negative_slope", g.negative_slope.to_string()),
            ("gat.lr", g.lr.to_string()),
            ("gat.weight_decay", g.weight_decay.to_string()),
            (
                "gat.decay_mode",
                match g.decay_mode {
                    WeightDecay::L2 => "l2".into(),
                    WeightDecay::Decoupled => "decoupled".into(),
                },
            ),
            ("gat.epochs", g.epochs.to_string()),
            ("gat.patience", g.patience.to_string()),
            ("gat.self_loops", g.self_loops.to_string()),
            ("rogat.alpha", r.alpha.to_string()),
            ("rogat.beta", r.beta.to_string()),
            ("rogat.gamma", r.gamma.to_string()),
            ("rogat.lambda", r.lambda.to_string()),
            ("rogat.eta1", r.eta1.to_string()),
            ("rogat.eta2", r.eta2.to_string()),
            ("rogat.t1", r.t1.to_string()),
            ("rogat.t2", r.t2.to_string()),
            ("sbm.n_nodes", self.sbm.n_nodes.to_string()),
            ("sbm.n_classes", self.sbm.n_classes.to_string()),
            ("sbm.feature_dim", self.sbm.feature_dim.to_string()),
            ("sbm.feature_signal", self.sbm.feature_signal.to_string()),
            ("sbm.ratios", join(&self.sbm_ratios)),
            ("sbm.diff_edges", self.sbm_diff_edges.to_string()),
            ("grid.lambda", join(&self.grid_lambda)),
            ("grid.alpha", join(&self.grid_alpha)),
        ];
        entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// `key=value` pairs separated by spaces, suitable for `--set`.
    pub fn to_line(&self) -> String {
        self.to_map()
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
