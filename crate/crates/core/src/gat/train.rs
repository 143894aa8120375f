use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward, ForwardSpec, GatConfig, GatParams, Input, NodeFeatures};
use crate::error::{Error, Result};
use crate::graph::{EdgeIndex, Graph};
use crate::scalar::Scalar;
use crate::tensor::{Adam, AdamConfig, Tape};

/// Losses and validation accuracy after one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Training loss of the (dropout) forward pass that produced the step.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Evaluation-mode view of a model on a graph.
#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    pub log_probs: Array2<T>,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

/// Full-batch trainer: parameters, optimizer state and the dropout stream.
///
/// One `ChaCha8Rng` seeded from `cfg.seed` first initializes the
/// parameters and then supplies every dropout mask, so two trainers built
/// from the same config and fed the same inputs follow identical
/// trajectories.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    cfg: GatConfig,
    params: GatParams<T>,
    adam: Adam<T>,
    rng: ChaCha8Rng,
    train_nodes: Vec<usize>,
    train_labels: Vec<usize>,
    val_nodes: Vec<usize>,
    val_labels: Vec<usize>,
    test_nodes: Vec<usize>,
    test_labels: Vec<usize>,
    epochs_run: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(g: &Graph<T>, cfg: &GatConfig) -> Result<Self> {
        cfg.validate()?;
        let masks = g.masks();
        let train_nodes = masks.train_indices();
        if train_nodes.is_empty() {
            return Err(Error::Config("training mask is empty".into()));
        }
        let val_nodes = masks.val_indices();
        let test_nodes = masks.test_indices();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = GatParams::init(cfg, g.feature_dim(), g.n_classes(), &mut rng)?;
        let adam = Adam::new(
            AdamConfig {
                lr: cfg.lr,
                weight_decay: cfg.weight_decay,
                decay_mode: cfg.decay_mode,
                ..Default::default()
            },
            params.tensors(),
        );
        Ok(Trainer {
            cfg: cfg.clone(),
            train_labels: g.require_labels(&train_nodes)?,
            val_labels: g.require_labels(&val_nodes)?,
            test_labels: g.require_labels(&test_nodes)?,
            train_nodes,
            val_nodes,
            test_nodes,
            params,
            adam,
            rng,
            epochs_run: 0,
        })
    }

    pub fn config(&self) -> &GatConfig {
        &self.cfg
    }

    pub fn params(&self) -> &GatParams<T> {
        &self.params
    }

    pub fn epochs_run(&self) -> usize {
        self.epochs_run
    }

    pub fn train_nodes(&self) -> &[usize] {
        &self.train_nodes
    }

    pub fn train_labels(&self) -> &[usize] {
        &self.train_labels
    }

    fn spec<'a>(&self, edges: &'a EdgeIndex, edge_weight: Option<&'a [T]>, training: bool) -> ForwardSpec<'a, T> {
        ForwardSpec {
            edges,
            edge_weight,
            dropout: self.cfg.dropout,
            negative_slope: self.cfg.negative_slope,
            training,
        }
    }

    /// One Adam step on the masked training loss, followed by an
    /// evaluation-mode pass for validation metrics.
    pub fn epoch(&mut self, x: &NodeFeatures<T>, edges: &EdgeIndex, edge_weight: Option<&[T]>) -> Result<EpochStats> {
        let mut tape = Tape::new();
        let vars = self.params.record(&mut tape);
        let xv = x.input(&mut tape);
        let spec = self.spec(edges, edge_weight, true);
        let out = forward(&mut tape, &self.params, &vars, xv, &spec, &mut self.rng)?;
        let loss = tape.masked_nll_loss(out.log_probs, &self.train_labels, &self.train_nodes)?;
        let train_loss = tape.value(loss)[[0, 0]].to_f64_lossy();
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {train_loss} at epoch {}",
                self.epochs_run + 1
            )));
        }
        tape.backward(loss)?;
        let grads: Vec<Array2<T>> = vars
            .all()
            .iter()
            .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| Array2::zeros(tape.shape(v))))
            .collect();
        let grad_refs: Vec<&Array2<T>> = grads.iter().collect();
        self.adam.step(&mut self.params.tensors_mut(), &grad_refs)?;
        self.epochs_run += 1;
        let eval = self.evaluate(x, edges, edge_weight)?;
        Ok(EpochStats {
            epoch: self.epochs_run,
            train_loss,
            val_loss: eval.val_loss,
            val_acc: eval.val_acc,
        })
    }

    /// Evaluation-mode forward pass with losses and accuracies per split.
    /// Empty splits report `NaN`.
    pub fn evaluate(&self, x: &NodeFeatures<T>, edges: &EdgeIndex, edge_weight: Option<&[T]>) -> Result<Evaluation<T>> {
        evaluate_params(
            &self.params,
            &self.cfg,
            x,
            edges,
            edge_weight,
            [
                (&self.train_nodes, &self.train_labels),
                (&self.val_nodes, &self.val_labels),
                (&self.test_nodes, &self.test_labels),
            ],
        )
    }

    /// Evaluates arbitrary parameters against this trainer's splits.
    pub fn evaluate_with(
        &self,
        params: &GatParams<T>,
        x: &NodeFeatures<T>,
        edges: &EdgeIndex,
        edge_weight: Option<&[T]>,
    ) -> Result<Evaluation<T>> {
        evaluate_params(
            params,
            &self.cfg,
            x,
            edges,
            edge_weight,
            [
                (&self.train_nodes, &self.train_labels),
                (&self.val_nodes, &self.val_labels),
                (&self.test_nodes, &self.test_labels),
            ],
        )
    }

    /// Evaluation-mode training loss and its gradient with respect to the
    /// input features. Consumes no randomness.
    pub fn input_gradient(&self, x: &Array2<T>, edges: &EdgeIndex, edge_weight: Option<&[T]>) -> Result<(f64, Array2<T>)> {
        let mut tape = Tape::new();
        let vars = self.params.record(&mut tape);
        let xv = tape.param(x.clone());
        let spec = self.spec(edges, edge_weight, false);
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let out = forward(&mut tape, &self.params, &vars, Input::Dense(xv), &spec, &mut unused)?;
        let loss = tape.masked_nll_loss(out.log_probs, &self.train_labels, &self.train_nodes)?;
        let value = tape.value(loss)[[0, 0]].to_f64_lossy();
        tape.backward(loss)?;
        let grad = tape.grad(xv).cloned().unwrap_or_else(|| Array2::zeros(x.dim()));
        Ok((value, grad))
    }
}

fn evaluate_params<T: Scalar>(
    params: &GatParams<T>,
    cfg: &GatConfig,
    x: &NodeFeatures<T>,
    edges: &EdgeIndex,
    edge_weight: Option<&[T]>,
    splits: [(&Vec<usize>, &Vec<usize>); 3],
) -> Result<Evaluation<T>> {
    let log_probs = super::infer(params, x, edges, edge_weight, cfg.negative_slope)?;
    let pred = predict(&log_probs);
    let nll = |(nodes, labels): (&Vec<usize>, &Vec<usize>)| -> f64 {
        if nodes.is_empty() {
            return f64::NAN;
        }
        let total: f64 = nodes
            .iter()
            .zip(labels.iter())
            .map(|(&i, &c)| -log_probs[[i, c]].to_f64_lossy())
            .sum();
        total / nodes.len() as f64
    };
    let acc = |(nodes, labels): (&Vec<usize>, &Vec<usize>)| accuracy(&pred, nodes, labels);
    Ok(Evaluation {
        train_loss: nll(splits[0]),
        val_loss: nll(splits[1]),
        val_acc: acc(splits[1]),
        test_acc: acc(splits[2]),
        log_probs,
    })
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict<T: Scalar>(scores: &Array2<T>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Fraction of `nodes` whose prediction equals the paired label; `NaN`
/// when `nodes` is empty.
pub fn accuracy(pred: &[usize], nodes: &[usize], labels: &[usize]) -> f64 {
    if nodes.is_empty() {
        return f64::NAN;
    }
    let hits = nodes.iter().zip(labels).filter(|(&i, &c)| pred[i] == c).count();
    hits as f64 / nodes.len() as f64
}

/// Result of [`train_gat`].
#[derive(Clone, Debug)]
pub struct GatRun<T> {
    /// Parameters at the epoch with the lowest validation loss.
    pub params: GatParams<T>,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
    /// Evaluation of `params` on the training graph.
    pub eval: Evaluation<T>,
}

/// Trains a GAT on `g` with early stopping on validation loss.
///
/// Without validation nodes the training loss of the evaluation pass is
/// used for selection instead.
pub fn train_gat<T: Scalar>(g: &Graph<T>, cfg: &GatConfig) -> Result<GatRun<T>> {
    let edges = EdgeIndex::from_graph(g, cfg.self_loops);
    let mut trainer = Trainer::new(g, cfg)?;
    let x = &NodeFeatures::new(g.features().clone());
    let use_val = !g.masks().val_indices().is_empty();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0, trainer.params().clone());
    let mut since_best = 0;
    for _ in 0..cfg.epochs {
        let stats = trainer.epoch(x, &edges, None)?;
        let score = if use_val {
            stats.val_loss
        } else {
            trainer.evaluate(x, &edges, None)?.train_loss
        };
        history.push(stats);
        if score < best.0 {
            best = (score, stats.epoch, trainer.params().clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log::debug!("early stop at epoch {} (best {})", stats.epoch, best.1);
                break;
            }
        }
    }
    let (_, best_epoch, params) = best;
    let eval = trainer.evaluate_with(&params, x, &edges, None)?;
    Ok(GatRun {
        params,
        best_epoch,
        history,
        eval,
    })
}
