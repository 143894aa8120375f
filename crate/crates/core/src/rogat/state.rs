use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Zip};

use super::RogatConfig;
use crate::error::{Error, Result};
use crate::gat::{infer, EdgeAttention, GatParams, NodeFeatures, Trainer};
use crate::graph::{EdgeIndex, Graph};
use crate::scalar::Scalar;

/// Learned edge weights `Ā` and features `X̄`, next to the inputs they
/// started from.
///
/// `Ā` lives on the undirected edges of the input graph, one value per
/// edge, so it is symmetric by construction. Self-loops are not stored and
/// always weigh 1.
#[derive(Clone, Debug, PartialEq)]
pub struct RevisedState<T> {
    base: EdgeIndex,
    edges: Vec<(usize, usize)>,
    a_input: Vec<T>,
    a_bar: Vec<T>,
    x_input: Array2<T>,
    x_bar: Array2<T>,
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> RevisedState<T> {
    /// `Ā ← A`, `X̄ ← X`. Feature bounds are the per-column range of `X`.
    pub fn init(g: &Graph<T>, self_loops: bool) -> Result<Self> {
        if g.n_nodes() == 0 {
            return Err(Error::EmptyGraph);
        }
        let edges = g.edges();
        let a_input: Vec<T> = edges.iter().map(|&(i, j)| g.adjacency()[[i, j]]).collect();
        let x = g.features();
        let lower = x
            .columns()
            .into_iter()
            .map(|c| c.iter().copied().fold(T::infinity(), T::min))
            .collect();
        let upper = x
            .columns()
            .into_iter()
            .map(|c| c.iter().copied().fold(T::neg_infinity(), T::max))
            .collect();
        let mut state = RevisedState {
            base: EdgeIndex::new(g.n_nodes(), &edges, self_loops),
            a_bar: a_input.clone(),
            edges,
            a_input,
            x_input: x.clone(),
            x_bar: x.clone(),
            lower,
            upper,
        };
        state.project_structure();
        Ok(state)
    }

    pub fn n_nodes(&self) -> usize {
        self.base.n_nodes()
    }

    /// Undirected support `(i, j)`, `i < j`, aligned with [`Self::a_bar`].
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn a_input(&self) -> &[T] {
        &self.a_input
    }

    pub fn a_bar(&self) -> &[T] {
        &self.a_bar
    }

    /// Raw access; call [`Self::project_structure`] afterwards to restore
    /// the `[0, 1]` range.
    pub fn a_bar_mut(&mut self) -> &mut [T] {
        &mut self.a_bar
    }

    pub fn x_input(&self) -> &Array2<T> {
        &self.x_input
    }

    pub fn x_bar(&self) -> &Array2<T> {
        &self.x_bar
    }

    /// Raw access; call [`Self::project_features`] afterwards.
    pub fn x_bar_mut(&mut self) -> &mut Array2<T> {
        &mut self.x_bar
    }

    /// Per-column `(min, max)` of the input features.
    pub fn feature_bounds(&self) -> (&[T], &[T]) {
        (&self.lower, &self.upper)
    }

    /// Full attention neighborhood: every supported edge plus self-loops.
    pub fn base_edges(&self) -> &EdgeIndex {
        &self.base
    }

    fn position(&self, u: usize, v: usize) -> Option<usize> {
        let key = if u < v { (u, v) } else { (v, u) };
        self.edges.binary_search(&key).ok()
    }

    /// `Ā_uv`; 1 on the diagonal, `None` off the support.
    pub fn weight(&self, u: usize, v: usize) -> Option<T> {
        if u == v {
            return (u < self.n_nodes()).then(T::one);
        }
        self.position(u, v).map(|k| self.a_bar[k])
    }

    pub fn set_weight(&mut self, u: usize, v: usize, w: T) -> Result<()> {
        let k = self
            .position(u, v)
            .ok_or_else(|| Error::Support(format!("({u}, {v}) is not a supported edge")))?;
        self.a_bar[k] = w.max(T::zero()).min(T::one());
        Ok(())
    }

    /// Symmetric dense `Ā` with a zero diagonal.
    pub fn a_bar_dense(&self) -> Array2<T> {
        let n = self.n_nodes();
        let mut a = Array2::zeros((n, n));
        for (&(i, j), &w) in self.edges.iter().zip(&self.a_bar) {
            a[[i, j]] = w;
            a[[j, i]] = w;
        }
        a
    }

    /// Clamps `Ā` into `[0, 1]`.
    pub fn project_structure(&mut self) {
        for w in &mut self.a_bar {
            *w = w.max(T::zero()).min(T::one());
        }
    }

    /// Clamps each column of `X̄` to the range of the matching input column.
    pub fn project_features(&mut self) {
        for (mut col, (&lo, &hi)) in self.x_bar.columns_mut().into_iter().zip(self.lower.iter().zip(&self.upper)) {
            col.mapv_inplace(|v| v.max(lo).min(hi));
        }
    }

    fn sq_distance(&self, i: usize, j: usize) -> T {
        Zip::from(self.x_bar.row(i))
            .and(self.x_bar.row(j))
            .fold(T::zero(), |acc, &a, &b| acc + (a - b) * (a - b))
    }

    /// Gradient of the structure objective with respect to one directed
    /// entry of `Ā`, per supported edge: `2(Ā_ij − A_ij) + (α/2)‖x̄_i − x̄_j‖²`.
    pub fn structure_gradient(&self, alpha: f64) -> Vec<T> {
        let half_alpha = T::of(alpha / 2.0);
        let two = T::of(2.0);
        self.edges
            .iter()
            .enumerate()
            .map(|(k, &(i, j))| two * (self.a_bar[k] - self.a_input[k]) + half_alpha * self.sq_distance(i, j))
            .collect()
    }

    /// Projected gradient step on `Ā`. Self-loops are untouched.
    pub fn structure_step(&mut self, alpha: f64, eta1: f64) {
        let grad = self.structure_gradient(alpha);
        let eta = T::of(eta1);
        for (w, g) in self.a_bar.iter_mut().zip(grad) {
            *w -= eta * g;
        }
        self.project_structure();
    }

    /// `‖A − Ā‖²_F + α·tr(X̄ᵀL̄X̄)` over the dense symmetric matrices.
    pub fn structure_objective(&self, alpha: f64) -> f64 {
        let mut fro = 0.0;
        let mut smooth = 0.0;
        for (k, &(i, j)) in self.edges.iter().enumerate() {
            let d = (self.a_input[k] - self.a_bar[k]).to_f64_lossy();
            fro += 2.0 * d * d;
            smooth += self.a_bar[k].to_f64_lossy() * self.sq_distance(i, j).to_f64_lossy();
        }
        fro + alpha * smooth
    }

    /// `L̄·m` with `L̄ = D̄ − Ā`: row `i` is `Σ_j Ā_ij (m_i − m_j)`.
    pub fn laplacian_times(&self, m: &Array2<T>) -> Result<Array2<T>> {
        if m.nrows() != self.n_nodes() {
            return Err(Error::shape(
                "laplacian_times",
                format!("{} rows for {} nodes", m.nrows(), self.n_nodes()),
            ));
        }
        let mut out = Array2::zeros(m.dim());
        for (&(i, j), &w) in self.edges.iter().zip(&self.a_bar) {
            if w == T::zero() {
                continue;
            }
            let diff = &m.row(i) - &m.row(j);
            out.row_mut(i).scaled_add(w, &diff);
            out.row_mut(j).scaled_add(-w, &diff);
        }
        Ok(out)
    }

    /// `β‖X̄ − X‖²_F + γ·tr(X̄ᵀL̄X̄)`, the feature objective without the
    /// classification term.
    pub fn feature_objective(&self, beta: f64, gamma: f64) -> f64 {
        let recon: f64 = Zip::from(&self.x_bar)
            .and(&self.x_input)
            .fold(0.0, |acc, &a, &b| acc + (a - b).to_f64_lossy().powi(2));
        let smooth: f64 = self
            .edges
            .iter()
            .zip(&self.a_bar)
            .map(|(&(i, j), &w)| w.to_f64_lossy() * self.sq_distance(i, j).to_f64_lossy())
            .sum();
        beta * recon + gamma * smooth
    }

    /// `2β(X̄ − X) + 2γ·L̄X̄ + λ·∇_X̄ L`, where `L` is the evaluation-mode
    /// training loss of `model` on the revised graph. Returns `L` (0 when
    /// `λ = 0`) along with the gradient.
    pub fn feature_gradient(&self, cfg: &RogatConfig, model: &Trainer<T>) -> Result<(f64, Array2<T>)> {
        let mut grad = self.laplacian_times(&self.x_bar)?;
        grad.mapv_inplace(|v| v * T::of(2.0 * cfg.gamma));
        grad.scaled_add(T::of(2.0 * cfg.beta), &(&self.x_bar - &self.x_input));
        let mut loss = 0.0;
        if cfg.lambda != 0.0 {
            let (edges, weight) = self.attention_support();
            let (l, g) = model.input_gradient(&self.x_bar, &edges, weight.as_deref())?;
            grad.scaled_add(T::of(cfg.lambda), &g);
            loss = l;
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature gradient".into()));
        }
        Ok((loss, grad))
    }

    /// Projected gradient step on `X̄`.
    pub fn feature_step(&mut self, cfg: &RogatConfig, model: &Trainer<T>) -> Result<f64> {
        let (loss, grad) = self.feature_gradient(cfg, model)?;
        self.x_bar.scaled_add(T::of(-cfg.eta2), &grad);
        self.project_features();
        Ok(loss)
    }

    /// Attention neighborhood for the current `Ā`: edges with `Ā > 0` plus
    /// self-loops, and the matching per-edge weights. The weights are
    /// `None` when every kept edge has weight 1.
    pub fn attention_support(&self) -> (EdgeIndex, Option<Vec<T>>) {
        let undirected = self.base.undirected();
        let edges = self
            .base
            .filtered(|e| undirected[e].is_none_or(|k| self.a_bar[k] > T::zero()));
        let weight: Vec<T> = edges
            .undirected()
            .iter()
            .map(|k| k.map_or(T::one(), |k| self.a_bar[k]))
            .collect();
        if weight.iter().all(|&w| w == T::one()) {
            (edges, None)
        } else {
            (edges, Some(weight))
        }
    }

    /// Writes `src,dst,a_bar` for every supported edge and `X̄` as
    /// headerless CSV.
    pub fn export(&self, edges_path: impl AsRef<Path>, features_path: impl AsRef<Path>) -> Result<()> {
        let edges_path = edges_path.as_ref();
        let file = File::create(edges_path).map_err(|e| Error::io(edges_path, e))?;
        let mut out = BufWriter::new(file);
        let write_edges = |out: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(out, "src,dst,a_bar")?;
            for (&(i, j), &a) in self.edges.iter().zip(&self.a_bar) {
                writeln!(out, "{i},{j},{}", a.to_f64_lossy())?;
            }
            out.flush()
        };
        write_edges(&mut out).map_err(|e| Error::io(edges_path, e))?;

        let features_path = features_path.as_ref();
        let file = File::create(features_path).map_err(|e| Error::io(features_path, e))?;
        let mut out = BufWriter::new(file);
        for row in self.x_bar.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_f64_lossy().to_string()).collect();
            writeln!(out, "{}", line.join(",")).map_err(|e| Error::io(features_path, e))?;
        }
        out.flush().map_err(|e| Error::io(features_path, e))
    }
}

/// Scales each coefficient by `Ā` of its edge, without renormalizing.
/// Self-loops keep their coefficient.
pub fn revised_attention<T: Scalar>(att: &EdgeAttention<T>, state: &RevisedState<T>) -> Result<EdgeAttention<T>> {
    let edges = &att.edges;
    if edges.n_nodes() != state.n_nodes() || att.coefficients.nrows() != edges.n_edges() {
        return Err(Error::Support("attention and state cover different graphs".into()));
    }
    let mut coefficients = att.coefficients.clone();
    for (e, mut row) in coefficients.rows_mut().into_iter().enumerate() {
        let (u, v) = (edges.src()[e], edges.dst()[e]);
        let w = state
            .weight(u, v)
            .ok_or_else(|| Error::Support(format!("edge ({u}, {v}) is outside the support")))?;
        row.mapv_inplace(|c| c * w);
    }
    Ok(EdgeAttention {
        edges: edges.clone(),
        coefficients,
    })
}

/// Evaluation-mode log-probabilities on the revised graph and features.
pub fn rogat_infer<T: Scalar>(params: &GatParams<T>, state: &RevisedState<T>, negative_slope: f64) -> Result<Array2<T>> {
    let (edges, weight) = state.attention_support();
    infer(
        params,
        &NodeFeatures::new(state.x_bar.clone()),
        &edges,
        weight.as_deref(),
        negative_slope,
    )
}
