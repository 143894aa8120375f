//! Attention rescaled by a learned edge weight, with alternating
//! refinement of structure, features and network parameters.

mod state;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gat::GatConfig;

pub use state::{revised_attention, rogat_infer, RevisedState};
pub use train::{fake_real_ratio, train_rogat, OuterStats, RogatRun};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RogatConfig {
    /// Weight of the structure smoothness term.
    pub alpha: f64,
    /// Weight of the feature reconstruction term.
    pub beta: f64,
    /// Weight of the feature smoothness term.
    pub gamma: f64,
    /// Weight of the classification loss in the feature step.
    pub lambda: f64,
    /// Structure step size.
    pub eta1: f64,
    /// Feature step size.
    pub eta2: f64,
    /// Outer iterations.
    pub t1: usize,
    /// Parameter epochs per outer iteration.
    pub t2: usize,
    pub enable_structure: bool,
    pub enable_feature: bool,
    pub gat: GatConfig,
}

impl Default for RogatConfig {
    fn default() -> Self {
        RogatConfig {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            lambda: 1.0,
            eta1: 0.01,
            eta2: 0.01,
            t1: 10,
            t2: 10,
            enable_structure: true,
            enable_feature: true,
            gat: GatConfig::default(),
        }
    }
}

impl RogatConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("eta1", self.eta1),
            ("eta2", self.eta2),
        ];
        if let Some((name, v)) = weights.iter().find(|(_, v)| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("{name} = {v} must be a nonnegative number")));
        }
        if self.t1 == 0 || self.t2 == 0 {
            return Err(Error::Config("t1 and t2 must be at least 1".into()));
        }
        self.gat.validate()
    }
}
