//! Multi-head graph attention network.

mod checkpoint;
mod train;

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EdgeIndex;
use crate::scalar::Scalar;
use crate::tensor::{CsrMatrix, Tape, Var, WeightDecay};

pub use checkpoint::{load_params, save_params};
pub use train::{accuracy, predict, train_gat, EpochStats, Evaluation, GatRun, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatConfig {
    pub n_layers: usize,
    /// Heads per layer; hidden layers concatenate, the output layer averages.
    pub heads: Vec<usize>,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub negative_slope: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub decay_mode: WeightDecay,
    pub epochs: usize,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    /// Whether every node attends to itself.
    pub self_loops: bool,
    pub seed: u64,
}

impl Default for GatConfig {
    fn default() -> Self {
        GatConfig {
            n_layers: 2,
            heads: vec![8, 1],
            hidden_dim: 8,
            dropout: 0.6,
            negative_slope: 0.2,
            lr: 0.005,
            weight_decay: 5e-4,
            decay_mode: WeightDecay::L2,
            epochs: 200,
            patience: 100,
            self_loops: true,
            seed: 0,
        }
    }
}

impl GatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.heads.len() != self.n_layers {
            return Err(Error::Config(format!(
                "{} layers with head counts {:?}",
                self.n_layers, self.heads
            )));
        }
        if self.heads.contains(&0) || self.hidden_dim == 0 {
            return Err(Error::Config("head counts and hidden width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.negative_slope >= 0.0) {
            return Err(Error::Config("lr must be positive, weight decay and slope nonnegative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// One attention layer: `heads` parallel projections of width `out_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct GatLayer<T> {
    /// `d_in × (heads·out_dim)`; head `h` owns columns `h·out_dim..(h+1)·out_dim`.
    pub weight: Array2<T>,
    /// `out_dim × heads`; column `h` scores the source node of an edge.
    pub att_src: Array2<T>,
    /// `out_dim × heads`; column `h` scores the destination node.
    pub att_dst: Array2<T>,
    pub heads: usize,
    pub out_dim: usize,
    pub concat: bool,
}

impl<T: Scalar> GatLayer<T> {
    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_width(&self) -> usize {
        if self.concat {
            self.heads * self.out_dim
        } else {
            self.out_dim
        }
    }
}

/// Learnable parameters of a stacked GAT.
#[derive(Clone, Debug, PartialEq)]
pub struct GatParams<T> {
    pub layers: Vec<GatLayer<T>>,
}

impl<T: Scalar> GatParams<T> {
    /// Glorot-uniform initialization. Draws come from `rng` in a fixed order:
    /// per layer, the projection then source then destination attention.
    pub fn init<R: Rng + ?Sized>(cfg: &GatConfig, in_dim: usize, n_classes: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if in_dim == 0 || n_classes == 0 {
            return Err(Error::Config(format!("input width {in_dim}, {n_classes} classes")));
        }
        let mut layers = Vec::with_capacity(cfg.n_layers);
        let mut width = in_dim;
        for (k, &heads) in cfg.heads.iter().enumerate() {
            let last = k + 1 == cfg.n_layers;
            let out_dim = if last { n_classes } else { cfg.hidden_dim };
            let weight = glorot(width, heads * out_dim, rng);
            let att_src = glorot_attention(out_dim, heads, rng);
            let att_dst = glorot_attention(out_dim, heads, rng);
            let layer = GatLayer {
                weight,
                att_src,
                att_dst,
                heads,
                out_dim,
                concat: !last,
            };
            width = layer.output_width();
            layers.push(layer);
        }
        Ok(GatParams { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output_width())
    }

    /// Parameter matrices in a fixed order (per layer: weight, att_src, att_dst).
    pub fn tensors(&self) -> Vec<&Array2<T>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.att_src, &l.att_dst])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.att_src, &mut l.att_dst])
            .collect()
    }

    pub fn n_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Records all parameters as differentiable leaves.
    pub fn record(&self, tape: &mut Tape<T>) -> ParamVars {
        ParamVars {
            layers: self
                .layers
                .iter()
                .map(|l| LayerVars {
                    weight: tape.param(l.weight.clone()),
                    att_src: tape.param(l.att_src.clone()),
                    att_dst: tape.param(l.att_dst.clone()),
                })
                .collect(),
        }
    }

    /// Attention coefficients of every layer for `features` in evaluation mode.
    pub fn attention(&self, features: &Array2<T>, edges: &EdgeIndex, slope: f64) -> Result<Vec<EdgeAttention<T>>> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape);
        let x = Input::Dense(tape.constant(features.clone()));
        let spec = ForwardSpec {
            edges,
            edge_weight: None,
            dropout: 0.0,
            negative_slope: slope,
            training: false,
        };
        let out = forward(&mut tape, self, &vars, x, &spec, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(out
            .attention
            .iter()
            .map(|&a| EdgeAttention {
                edges: edges.clone(),
                coefficients: tape.value(a).clone(),
            })
            .collect())
    }
}

fn glorot<T: Scalar, R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || T::of(rng.random_range(-limit..limit)))
}

/// Each head's attention vector has length `2·out_dim`; its halves are
/// stored as the source and destination columns.
fn glorot_attention<T: Scalar, R: Rng + ?Sized>(out_dim: usize, heads: usize, rng: &mut R) -> Array2<T> {
    let limit = (6.0 / (2 * out_dim + 1) as f64).sqrt();
    Array2::from_shape_simple_fn((out_dim, heads), || T::of(rng.random_range(-limit..limit)))
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub weight: Var,
    pub att_src: Var,
    pub att_dst: Var,
}

/// Tape handles for a recorded [`GatParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub layers: Vec<LayerVars>,
}

impl ParamVars {
    pub fn all(&self) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight, l.att_src, l.att_dst])
            .collect()
    }
}

/// Per-edge attention of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeAttention<T> {
    pub edges: EdgeIndex,
    /// `E × heads`, row `e` belongs to directed edge `e` of `edges`.
    pub coefficients: Array2<T>,
}

impl<T: Scalar> EdgeAttention<T> {
    /// Sum of incoming coefficients per destination node and head.
    pub fn destination_sums(&self) -> Array2<T> {
        let n = self.edges.n_nodes();
        let mut sums = Array2::zeros((n, self.coefficients.ncols()));
        for (e, &v) in self.edges.dst().iter().enumerate() {
            let mut row = sums.row_mut(v);
            row += &self.coefficients.row(e);
        }
        sums
    }

    /// Coefficient of `u -> v` for head `h`.
    pub fn get(&self, u: usize, v: usize, h: usize) -> Option<T> {
        self.edges.find(u, v).map(|e| self.coefficients[[e, h]])
    }
}

/// Node features plus a compressed copy when they are mostly zero.
#[derive(Clone, Debug)]
pub struct NodeFeatures<T> {
    dense: Array2<T>,
    sparse: Option<Arc<CsrMatrix<T>>>,
}

impl<T: Scalar> NodeFeatures<T> {
    pub fn new(dense: Array2<T>) -> Self {
        let sparse = CsrMatrix::detect(&dense).map(Arc::new);
        NodeFeatures { dense, sparse }
    }

    pub fn dense(&self) -> &Array2<T> {
        &self.dense
    }

    pub fn is_sparse(&self) -> bool {
        self.sparse.is_some()
    }

    /// Records the features as a constant input.
    pub fn input(&self, tape: &mut Tape<T>) -> Input<T> {
        match &self.sparse {
            Some(c) => Input::Sparse(Arc::clone(c)),
            None => Input::Dense(tape.constant(self.dense.clone())),
        }
    }
}

/// First-layer input of a forward pass.
#[derive(Clone, Debug)]
pub enum Input<T> {
    Dense(Var),
    /// Constant sparse features; no gradient is produced for them.
    Sparse(Arc<CsrMatrix<T>>),
}

impl<T: Scalar> Input<T> {
    fn rows(&self, tape: &Tape<T>) -> usize {
        match self {
            Input::Dense(v) => tape.shape(*v).0,
            Input::Sparse(c) => c.rows(),
        }
    }
}

/// Inputs shared by every layer of one forward pass.
pub struct ForwardSpec<'a, T> {
    pub edges: &'a EdgeIndex,
    /// Multiplies each normalized coefficient; aligned with `edges`.
    pub edge_weight: Option<&'a [T]>,
    pub dropout: f64,
    pub negative_slope: f64,
    pub training: bool,
}

pub struct ForwardOutput {
    /// `N × classes` row log-probabilities.
    pub log_probs: Var,
    /// Normalized coefficients per layer, before dropout and edge weighting.
    pub attention: Vec<Var>,
    /// Output of each layer; the last one holds the logits.
    pub hidden: Vec<Var>,
}

/// Records a full forward pass on `tape`.
///
/// Dropout masks are drawn from `rng` in layer order: inputs, then
/// attention coefficients. Nothing is drawn when `spec.training` is false.
pub fn forward<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    params: &GatParams<T>,
    vars: &ParamVars,
    x: Input<T>,
    spec: &ForwardSpec<'_, T>,
    rng: &mut R,
) -> Result<ForwardOutput> {
    let edges = spec.edges;
    if x.rows(tape) != edges.n_nodes() {
        return Err(Error::shape(
            "gat_forward",
            format!("{} feature rows for {} nodes", x.rows(tape), edges.n_nodes()),
        ));
    }
    edges.check_segments()?;
    let weight = match spec.edge_weight {
        Some(w) if w.len() != edges.n_edges() => {
            return Err(Error::Support(format!("{} edge weights for {} edges", w.len(), edges.n_edges())))
        }
        other => other,
    };
    let mut input = Some(x);
    let mut h = None;
    let mut attention = Vec::with_capacity(params.layers.len());
    let mut hidden = Vec::with_capacity(params.layers.len());
    for (layer, lv) in params.layers.iter().zip(&vars.layers) {
        let wh = match (input.take(), h) {
            (Some(Input::Sparse(c)), _) => {
                let c = if spec.training && spec.dropout > 0.0 {
                    Arc::new(c.dropout(spec.dropout, rng))
                } else {
                    c
                };
                tape.sparse_matmul(c, lv.weight)?
            }
            (Some(Input::Dense(v)), _) | (None, Some(v)) => {
                let dropped = tape.dropout(v, spec.dropout, spec.training, rng)?;
                tape.matmul(dropped, lv.weight)?
            }
            (None, None) => unreachable!("input consumed by the first layer"),
        };
        let logits = attention_logits(tape, lv, wh, edges, spec.negative_slope)?;
        let alpha = tape.segment_softmax(logits, edges.offsets_shared())?;
        attention.push(alpha);
        let mut coef = tape.dropout(alpha, spec.dropout, spec.training, rng)?;
        if let Some(w) = weight {
            let scale = Array2::from_shape_fn((w.len(), layer.heads), |(e, _)| w[e]);
            let scale = tape.constant(scale);
            coef = tape.mul(coef, scale)?;
        }
        let agg = tape.edge_aggregate(coef, wh, edges.src_shared(), edges.dst_shared())?;
        let out = if layer.concat {
            tape.elu(agg)
        } else {
            average_heads(tape, agg, layer.heads, layer.out_dim)?
        };
        hidden.push(out);
        h = Some(out);
    }
    let logits = h.ok_or_else(|| Error::Config("model has no layers".into()))?;
    Ok(ForwardOutput {
        log_probs: tape.row_log_softmax(logits),
        attention,
        hidden,
    })
}

/// Raw `E × heads` logits `LeakyReLU(a_dst·Wh_v + a_src·Wh_u)` for every
/// edge `u -> v`, given the projected inputs `wh`.
fn attention_logits<T: Scalar>(
    tape: &mut Tape<T>,
    lv: &LayerVars,
    wh: Var,
    edges: &EdgeIndex,
    slope: f64,
) -> Result<Var> {
    let s_src = tape.head_scores(wh, lv.att_src)?;
    let s_dst = tape.head_scores(wh, lv.att_dst)?;
    let e_src = tape.gather_rows(s_src, edges.src_shared())?;
    let e_dst = tape.gather_rows(s_dst, edges.dst_shared())?;
    let raw = tape.add(e_dst, e_src)?;
    Ok(tape.leaky_relu(raw, T::of(slope)))
}

/// Mean of the `heads` column blocks of `x`.
fn average_heads<T: Scalar>(tape: &mut Tape<T>, x: Var, heads: usize, f: usize) -> Result<Var> {
    if heads == 1 {
        return Ok(x);
    }
    let mut acc = tape.slice_cols(x, 0, f)?;
    for h in 1..heads {
        let part = tape.slice_cols(x, h * f, (h + 1) * f)?;
        acc = tape.add(acc, part)?;
    }
    Ok(tape.scale(acc, T::of(1.0 / heads as f64)))
}

/// Evaluation-mode log-probabilities.
pub fn infer<T: Scalar>(
    params: &GatParams<T>,
    features: &NodeFeatures<T>,
    edges: &EdgeIndex,
    edge_weight: Option<&[T]>,
    negative_slope: f64,
) -> Result<Array2<T>> {
    let mut tape = Tape::new();
    let vars = params.record(&mut tape);
    let x = features.input(&mut tape);
    let spec = ForwardSpec {
        edges,
        edge_weight,
        dropout: 0.0,
        negative_slope,
        training: false,
    };
    let out = forward(&mut tape, params, &vars, x, &spec, &mut ChaCha8Rng::seed_from_u64(0))?;
    Ok(tape.value(out.log_probs).clone())
}
