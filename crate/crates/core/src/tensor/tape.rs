use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;

use super::CsrMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var, Option<Arc<CsrMatrix<T>>>),
    SparseMatMul(Arc<CsrMatrix<T>>, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    LeakyRelu(Var, T),
    Elu(Var),
    Exp(Var),
    Dropout(Var, Array2<T>),
    GatherRows(Var, Arc<[usize]>),
    HeadScores(Var, Var),
    SegmentSoftmax(Var, Arc<[usize]>),
    EdgeAggregate {
        weights: Var,
        values: Var,
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
    },
    RowLogSoftmax(Var),
    MaskedNll {
        input: Var,
        targets: Vec<(usize, usize)>,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Array2<T>,
    grad: Option<Array2<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Reverse-mode differentiation tape over dense matrices.
///
/// Operations are appended in execution order, so every node's inputs
/// precede it and [`Tape::backward`] walks the list in exact reverse.
/// Gradients are retained for leaves only and accumulate across repeated
/// backward passes until [`Tape::zero_grad`].
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Records a differentiable input.
    pub fn param(&mut self, value: Array2<T>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Array2<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::shape("matmul", format!("{ar}x{ac} · {br}x{bc}")));
        }
        let sparse = CsrMatrix::detect(self.value(a)).map(Arc::new);
        let value = match &sparse {
            Some(sp) => sp.dot(self.value(b))?,
            None => self.value(a).dot(self.value(b)),
        };
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, rg, Op::MatMul(a, b, sparse)))
    }

    /// `a · b` for a constant sparse `a`; no gradient flows to `a`.
    pub fn sparse_matmul(&mut self, a: Arc<CsrMatrix<T>>, b: Var) -> Result<Var> {
        let value = a.dot(self.value(b))?;
        let rg = self.needs(b);
        Ok(self.push(value, rg, Op::SparseMatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a) + self.value(b);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a) * self.value(b);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).mapv(|v| v * c);
        let rg = self.needs(a);
        self.push(value, rg, Op::Scale(a, c))
    }

    /// Sum of all entries as a 1×1 value.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.needs(a);
        self.push(value, rg, Op::Sum(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let rows = self.shape(first).0;
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != rows) {
            return Err(Error::shape(
                "concat_cols",
                format!("row count {} vs {}", self.shape(bad).0, rows),
            ));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, rg, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let cols = self.shape(a).1;
        if start >= end || end > cols {
            return Err(Error::shape("slice_cols", format!("{start}..{end} of {cols} columns")));
        }
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        let rg = self.needs(a);
        Ok(self.push(value, rg, Op::SliceCols(a, start)))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let value = self.value(a).mapv(|v| if v > T::zero() { v } else { slope * v });
        let rg = self.needs(a);
        self.push(value, rg, Op::LeakyRelu(a, slope))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| if v > T::zero() { v } else { v.exp_m1() });
        let rg = self.needs(a);
        self.push(value, rg, Op::Elu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v.exp());
        let rg = self.needs(a);
        self.push(value, rg, Op::Exp(a))
    }

    /// Inverted dropout. Returns `a` itself when not training or `p == 0`.
    ///
    /// Entries that are exactly zero draw no mask and pass gradients with
    /// the keep scale; their output is zero either way. This keeps sparse
    /// inputs cheap.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask = self.value(a).map(|&v| {
            if v != T::zero() && rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        });
        let value = self.value(a) * &mask;
        let rg = self.needs(a);
        Ok(self.push(value, rg, Op::Dropout(a, mask)))
    }

    /// Row `indices[k]` of `a` becomes row `k` of the result.
    pub fn gather_rows(&mut self, a: Var, indices: Arc<[usize]>) -> Result<Var> {
        let rows = self.shape(a).0;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("gather_rows", format!("index {bad} for {rows} rows")));
        }
        let src = self.value(a);
        let mut value = Array2::zeros((indices.len(), src.ncols()));
        for (mut row, &i) in value.rows_mut().into_iter().zip(indices.iter()) {
            row.assign(&src.row(i));
        }
        let rg = self.needs(a);
        Ok(self.push(value, rg, Op::GatherRows(a, indices)))
    }

    /// Per-head dot products. `values` is `N × (H·F)` with head `h` in
    /// columns `h·F..(h+1)·F`; `att` is `F × H`. The result is `N × H` with
    /// `out[i][h] = Σ_f values[i][h·F + f] · att[f][h]`.
    pub fn head_scores(&mut self, values: Var, att: Var) -> Result<Var> {
        let (n, width) = self.shape(values);
        let (f, heads) = self.shape(att);
        if f * heads != width {
            return Err(Error::shape(
                "head_scores",
                format!("values {n}x{width} with attention {f}x{heads}"),
            ));
        }
        let x = self.value(values);
        let a = self.value(att);
        let mut value = Array2::zeros((n, heads));
        for i in 0..n {
            for h in 0..heads {
                let mut acc = T::zero();
                for k in 0..f {
                    acc += x[[i, h * f + k]] * a[[k, h]];
                }
                value[[i, h]] = acc;
            }
        }
        let rg = self.needs(values) || self.needs(att);
        Ok(self.push(value, rg, Op::HeadScores(values, att)))
    }

    /// Softmax of each column within contiguous row segments
    /// `offsets[v]..offsets[v + 1]` (one segment per destination node).
    pub fn segment_softmax(&mut self, logits: Var, offsets: Arc<[usize]>) -> Result<Var> {
        let x = self.value(logits);
        let rows = x.nrows();
        if offsets.first() != Some(&0) || offsets.last() != Some(&rows) {
            return Err(Error::shape(
                "segment_softmax",
                format!("offsets do not cover {rows} logits"),
            ));
        }
        if let Some(v) = offsets.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::EmptySegment(v));
        }
        let mut value = x.clone();
        for w in offsets.windows(2) {
            let mut seg = value.slice_mut(s![w[0]..w[1], ..]);
            for mut col in seg.columns_mut() {
                let max = col.fold(T::neg_infinity(), |m, &v| m.max(v));
                col.mapv_inplace(|v| (v - max).exp());
                let total = col.sum();
                col.mapv_inplace(|v| v / total);
            }
        }
        let rg = self.needs(logits);
        Ok(self.push(value, rg, Op::SegmentSoftmax(logits, offsets)))
    }

    /// Multi-head message passing. `weights` is `E × H` and `values` is
    /// `N × (H·F)`; for every edge `e` and head `h`,
    /// `out[dst[e]][h·F..(h+1)·F] += weights[e][h] · values[src[e]][h·F..(h+1)·F]`.
    pub fn edge_aggregate(&mut self, weights: Var, values: Var, src: Arc<[usize]>, dst: Arc<[usize]>) -> Result<Var> {
        let (e, heads) = self.shape(weights);
        let (n, width) = self.shape(values);
        if heads == 0 || width % heads != 0 || src.len() != e || dst.len() != e {
            return Err(Error::shape(
                "edge_aggregate",
                format!(
                    "weights {e}x{heads}, values {n}x{width}, {} sources, {} destinations",
                    src.len(),
                    dst.len()
                ),
            ));
        }
        if src.iter().chain(dst.iter()).any(|&i| i >= n) {
            return Err(Error::shape("edge_aggregate", format!("node index out of range for {n} nodes")));
        }
        let f = width / heads;
        let w = self.value(weights);
        let h = self.value(values);
        let mut out = Array2::<T>::zeros((n, width));
        for k in 0..e {
            let (s_row, d) = (h.row(src[k]), dst[k]);
            for hd in 0..heads {
                let wk = w[[k, hd]];
                for c in hd * f..(hd + 1) * f {
                    out[[d, c]] += wk * s_row[c];
                }
            }
        }
        let rg = self.needs(weights) || self.needs(values);
        Ok(self.push(out, rg, Op::EdgeAggregate { weights, values, src, dst }))
    }

    pub fn row_log_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        let rg = self.needs(a);
        self.push(value, rg, Op::RowLogSoftmax(a))
    }

    /// Mean negative log-likelihood over `nodes`, reading `log_probs[i][labels[k]]`.
    pub fn masked_nll_loss(&mut self, log_probs: Var, labels: &[usize], nodes: &[usize]) -> Result<Var> {
        let (rows, cols) = self.shape(log_probs);
        if nodes.is_empty() || nodes.len() != labels.len() {
            return Err(Error::shape(
                "masked_nll_loss",
                format!("{} nodes with {} labels", nodes.len(), labels.len()),
            ));
        }
        let targets: Vec<(usize, usize)> = nodes.iter().copied().zip(labels.iter().copied()).collect();
        if targets.iter().any(|&(i, c)| i >= rows || c >= cols) {
            return Err(Error::shape("masked_nll_loss", format!("target outside {rows}x{cols}")));
        }
        let lp = self.value(log_probs);
        let total: T = targets.iter().map(|&(i, c)| -lp[[i, c]]).sum();
        let value = Array2::from_elem((1, 1), total / T::of(targets.len() as f64));
        let rg = self.needs(log_probs);
        Ok(self.push(value, rg, Op::MaskedNll { input: log_probs, targets }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    /// Back-propagates from a 1×1 `loss`, adding into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape("backward", format!("loss has shape {:?}", self.shape(loss))));
        }
        if !self.needs(loss) {
            return Ok(());
        }
        let mut adj: Vec<Option<Array2<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => *acc += &g,
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: Array2<T>, adj: &mut [Option<Array2<T>>]) {
        let node = &self.nodes[i];
        let need = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => unreachable!("leaves handled by caller"),
            Op::MatMul(a, b, sparse) => {
                if need(a) {
                    accumulate(adj, *a, g.dot(&self.value(*b).t()));
                }
                if need(b) {
                    let db = match sparse {
                        Some(sp) => sp.t_dot(&g),
                        None => self.value(*a).t().dot(&g),
                    };
                    accumulate(adj, *b, db);
                }
            }
            Op::SparseMatMul(a, b) => accumulate(adj, *b, a.t_dot(&g)),
            Op::Add(a, b) => {
                if need(a) {
                    accumulate(adj, *a, g.clone());
                }
                if need(b) {
                    accumulate(adj, *b, g);
                }
            }
            Op::Mul(a, b) => {
                if need(a) {
                    accumulate(adj, *a, &g * self.value(*b));
                }
                if need(b) {
                    accumulate(adj, *b, &g * self.value(*a));
                }
            }
            Op::Scale(a, c) => accumulate(adj, *a, g.mapv(|v| v * *c)),
            Op::Sum(a) => {
                let s = g[[0, 0]];
                accumulate(adj, *a, Array2::from_elem(self.shape(*a), s));
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    if need(p) {
                        accumulate(adj, *p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::SliceCols(a, start) => {
                let mut full = Array2::zeros(self.shape(*a));
                let w = g.ncols();
                full.slice_mut(s![.., *start..*start + w]).assign(&g);
                accumulate(adj, *a, full);
            }
            Op::LeakyRelu(a, slope) => {
                let mut d = g;
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    if x <= T::zero() {
                        *d *= *slope;
                    }
                });
                accumulate(adj, *a, d);
            }
            Op::Elu(a) => {
                let mut d = g;
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    if x <= T::zero() {
                        *d *= x.exp();
                    }
                });
                accumulate(adj, *a, d);
            }
            Op::Exp(a) => accumulate(adj, *a, &g * &node.value),
            Op::Dropout(a, mask) => accumulate(adj, *a, &g * mask),
            Op::GatherRows(a, idx) => {
                let mut d = Array2::zeros(self.shape(*a));
                for (k, &r) in idx.iter().enumerate() {
                    let mut row = d.row_mut(r);
                    row += &g.row(k);
                }
                accumulate(adj, *a, d);
            }
            Op::SegmentSoftmax(a, offsets) => {
                let y = &node.value;
                let mut d = Array2::zeros(y.dim());
                for w in offsets.windows(2) {
                    for c in 0..y.ncols() {
                        let dot: T = (w[0]..w[1]).map(|r| y[[r, c]] * g[[r, c]]).sum();
                        for r in w[0]..w[1] {
                            d[[r, c]] = y[[r, c]] * (g[[r, c]] - dot);
                        }
                    }
                }
                accumulate(adj, *a, d);
            }
            Op::HeadScores(values, att) => {
                let x = self.value(*values);
                let a = self.value(*att);
                let (f, heads) = a.dim();
                if need(values) {
                    let mut dx = Array2::zeros(x.dim());
                    for i in 0..x.nrows() {
                        for h in 0..heads {
                            let gi = g[[i, h]];
                            for k in 0..f {
                                dx[[i, h * f + k]] = gi * a[[k, h]];
                            }
                        }
                    }
                    accumulate(adj, *values, dx);
                }
                if need(att) {
                    let mut da = Array2::zeros(a.dim());
                    for i in 0..x.nrows() {
                        for h in 0..heads {
                            let gi = g[[i, h]];
                            for k in 0..f {
                                da[[k, h]] += gi * x[[i, h * f + k]];
                            }
                        }
                    }
                    accumulate(adj, *att, da);
                }
            }
            Op::EdgeAggregate { weights, values, src, dst } => {
                let w = self.value(*weights);
                let h = self.value(*values);
                let heads = w.ncols();
                let f = h.ncols() / heads;
                if need(weights) {
                    let mut dw = Array2::zeros(w.dim());
                    for k in 0..src.len() {
                        let (gd, hs) = (g.row(dst[k]), h.row(src[k]));
                        for hd in 0..heads {
                            let mut acc = T::zero();
                            for c in hd * f..(hd + 1) * f {
                                acc += gd[c] * hs[c];
                            }
                            dw[[k, hd]] = acc;
                        }
                    }
                    accumulate(adj, *weights, dw);
                }
                if need(values) {
                    let mut dh = Array2::zeros(h.dim());
                    for k in 0..src.len() {
                        let (gd, s_idx) = (g.row(dst[k]), src[k]);
                        for hd in 0..heads {
                            let wk = w[[k, hd]];
                            for c in hd * f..(hd + 1) * f {
                                dh[[s_idx, c]] += wk * gd[c];
                            }
                        }
                    }
                    accumulate(adj, *values, dh);
                }
            }
            Op::RowLogSoftmax(a) => {
                let y = &node.value;
                let mut d = g;
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                    let total = drow.sum();
                    Zip::from(&mut drow).and(&yrow).for_each(|d, &ly| *d -= ly.exp() * total);
                }
                accumulate(adj, *a, d);
            }
            Op::MaskedNll { input, targets } => {
                let mut d = Array2::zeros(self.shape(*input));
                let scale = g[[0, 0]] / T::of(targets.len() as f64);
                for &(r, c) in targets {
                    d[[r, c]] -= scale;
                }
                accumulate(adj, *input, d);
            }
        }
    }
}

fn accumulate<T: Scalar>(adj: &mut [Option<Array2<T>>], v: Var, g: Array2<T>) {
    match &mut adj[v.0] {
        Some(acc) => *acc += &g,
        slot => *slot = Some(g),
    }
}
