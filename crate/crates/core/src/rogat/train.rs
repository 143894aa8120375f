use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{RevisedState, RogatConfig};
use crate::attacks::Perturbation;
use crate::error::{Error, Result};
use crate::gat::{EpochStats, Evaluation, GatParams, NodeFeatures, Trainer};
use crate::graph::Graph;
use crate::scalar::Scalar;

/// Snapshot taken at the end of one outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterStats {
    pub outer: usize,
    /// Mean `Ā` over supported edges.
    pub mean_a_bar: f64,
    /// Supported edges driven to exactly zero.
    pub silenced: usize,
    /// Classification loss seen by the feature step (0 when skipped).
    pub feature_loss: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub fake_real_ratio: Option<f64>,
}

/// Selected inner epoch and what it was trained on.
struct Best<T> {
    acc: f64,
    loss: f64,
    epoch: usize,
    params: GatParams<T>,
    state: RevisedState<T>,
}

/// Result of [`train_rogat`].
#[derive(Clone, Debug)]
pub struct RogatRun<T> {
    /// Parameters with the best validation accuracy (ties: lower loss).
    pub params: GatParams<T>,
    /// Revised graph and features the best parameters were trained on.
    pub state: RevisedState<T>,
    /// Revised state after the last outer iteration.
    pub final_state: RevisedState<T>,
    /// 1-based index over all inner epochs.
    pub best_epoch: usize,
    pub epochs: Vec<EpochStats>,
    pub history: Vec<OuterStats>,
    /// Fake/real weight ratio before training and after every outer
    /// iteration; empty without a perturbation.
    pub ratio_trace: Vec<f64>,
    pub eval: Evaluation<T>,
}

/// Mean `Ā` over edges the perturbation added divided by mean `Ā` over the
/// remaining supported edges.
pub fn fake_real_ratio<T: Scalar>(state: &RevisedState<T>, p: &Perturbation) -> Result<f64> {
    if p.added.is_empty() {
        return Err(Error::Perturbation("no added edges to compare".into()));
    }
    let added: HashSet<(usize, usize)> = p.added.iter().copied().collect();
    let (mut fake, mut n_fake, mut real, mut n_real) = (0.0, 0usize, 0.0, 0usize);
    for (e, &w) in state.edges().iter().zip(state.a_bar()) {
        if added.contains(e) {
            fake += w.to_f64_lossy();
            n_fake += 1;
        } else {
            real += w.to_f64_lossy();
            n_real += 1;
        }
    }
    if n_fake == 0 {
        return Err(Error::Perturbation("no added edge lies in the revised support".into()));
    }
    if n_real == 0 || real == 0.0 {
        return Err(Error::NonFinite("real edges carry no weight".into()));
    }
    Ok((fake / n_fake as f64) / (real / n_real as f64))
}

/// Alternates structure steps, feature steps and `t2` parameter epochs,
/// `t1` times. The perturbation, when given, only feeds the ratio trace.
pub fn train_rogat<T: Scalar>(g: &Graph<T>, cfg: &RogatConfig, perturbation: Option<&Perturbation>) -> Result<RogatRun<T>> {
    cfg.validate()?;
    let mut state = RevisedState::init(g, cfg.gat.self_loops)?;
    let mut trainer = Trainer::new(g, &cfg.gat)?;
    let use_val = !g.masks().val_indices().is_empty();
    let ratio = |s: &RevisedState<T>| perturbation.map(|p| fake_real_ratio(s, p)).transpose();

    let mut ratio_trace: Vec<f64> = ratio(&state)?.into_iter().collect();
    let mut epochs = Vec::with_capacity(cfg.t1 * cfg.t2);
    let mut history = Vec::with_capacity(cfg.t1);
    let mut best: Option<Best<T>> = None;

    for outer in 1..=cfg.t1 {
        if cfg.enable_structure {
            state.structure_step(cfg.alpha, cfg.eta1);
        }
        let mut feature_loss = 0.0;
        if cfg.enable_feature {
            feature_loss = state.feature_step(cfg, &trainer)?;
        }
        let (edges, weight) = state.attention_support();
        let x = NodeFeatures::new(state.x_bar().clone());
        let mut last = None;
        for _ in 0..cfg.t2 {
            let stats = trainer.epoch(&x, &edges, weight.as_deref())?;
            // Higher accuracy first, then lower loss; without a validation
            // split only the training loss is compared.
            let (acc, loss) = if use_val {
                (stats.val_acc, stats.val_loss)
            } else {
                (0.0, stats.train_loss)
            };
            let better = match &best {
                None => true,
                Some(b) => acc > b.acc || (acc == b.acc && loss < b.loss),
            };
            if better {
                best = Some(Best {
                    acc,
                    loss,
                    epoch: stats.epoch,
                    params: trainer.params().clone(),
                    state: state.clone(),
                });
            }
            epochs.push(stats);
            last = Some(stats);
        }
        let last = last.expect("t2 is at least 1");
        let r = ratio(&state)?;
        ratio_trace.extend(r);
        let a = state.a_bar();
        let outer_stats = OuterStats {
            outer,
            mean_a_bar: if a.is_empty() {
                f64::NAN
            } else {
                a.iter().map(|w| w.to_f64_lossy()).sum::<f64>() / a.len() as f64
            },
            silenced: a.iter().filter(|&&w| w == T::zero()).count(),
            feature_loss,
            train_loss: last.train_loss,
            val_loss: last.val_loss,
            val_acc: last.val_acc,
            fake_real_ratio: r,
        };
        log::debug!("outer {outer}: {outer_stats:?}");
        history.push(outer_stats);
    }

    let Best {
        epoch: best_epoch,
        params,
        state: best_state,
        ..
    } = best.expect("at least one epoch ran");
    let (edges, weight) = best_state.attention_support();
    let x = NodeFeatures::new(best_state.x_bar().clone());
    let eval = trainer.evaluate_with(&params, &x, &edges, weight.as_deref())?;
    Ok(RogatRun {
        params,
        state: best_state,
        final_state: state,
        best_epoch,
        epochs,
        history,
        ratio_trace,
        eval,
    })
}
