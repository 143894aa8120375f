//! Graph representation, dataset ingestion, synthetic generation and
//! structural statistics.
//!
//! Graphs are stored densely: every graph this crate targets has at most a
//! few thousand nodes, and the structure-revision step is simplest on a
//! dense symmetric matrix. Attention kernels work on the compressed
//! [`EdgeIndex`] derived from it on demand.

mod edges;
mod io;
mod sbm;
mod stats;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use edges::EdgeIndex;
pub use io::{load_csv_graph, load_edge_list, load_linqs, save_csv_graph, save_edge_list, save_linqs, LinqsImport};
pub use sbm::{sbm_generate, SbmSpec};
pub use stats::{extract_lcc, laplacian_smoothness, link_ratio, random_split, LinkStats};

/// Train/validation/test node masks. Pairwise disjoint.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn empty(n: usize) -> Self {
        Masks {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        }
    }

    pub fn from_indices(n: usize, train: &[usize], val: &[usize], test: &[usize]) -> Result<Self> {
        let mut m = Masks::empty(n);
        for (dst, idx) in [(&mut m.train, train), (&mut m.val, val), (&mut m.test, test)] {
            for &i in idx {
                if i >= n {
                    return Err(Error::Config(format!("mask index {i} out of range for {n} nodes")));
                }
                dst[i] = true;
            }
        }
        m.validate(n)?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.train.len() != n || self.val.len() != n || self.test.len() != n {
            return Err(Error::shape("masks", format!("mask lengths must equal node count {n}")));
        }
        for i in 0..n {
            let hits = self.train[i] as u8 + self.val[i] as u8 + self.test[i] as u8;
            if hits > 1 {
                return Err(Error::Config(format!("node {i} appears in more than one mask")));
            }
        }
        Ok(())
    }

    pub fn train_indices(&self) -> Vec<usize> {
        indices(&self.train)
    }

    pub fn val_indices(&self) -> Vec<usize> {
        indices(&self.val)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        indices(&self.test)
    }

    fn select(&self, nodes: &[usize]) -> Masks {
        Masks {
            train: nodes.iter().map(|&i| self.train[i]).collect(),
            val: nodes.iter().map(|&i| self.val[i]).collect(),
            test: nodes.iter().map(|&i| self.test[i]).collect(),
        }
    }
}

fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

/// Undirected attributed graph with node labels and a data split.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph<T> {
    adjacency: Array2<T>,
    features: Array2<T>,
    labels: Vec<Option<usize>>,
    n_classes: usize,
    masks: Masks,
    node_names: Vec<String>,
    class_names: Vec<String>,
}

impl<T: Scalar> Graph<T> {
    /// Builds a graph after checking symmetry, the `[0, 1]` entry domain and
    /// shape agreement. The diagonal is cleared: self-loops are the model's
    /// concern, not the data's.
    pub fn new(mut adjacency: Array2<T>, features: Array2<T>, labels: Vec<Option<usize>>) -> Result<Self> {
        let n = adjacency.nrows();
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        if adjacency.ncols() != n {
            return Err(Error::shape("graph", format!("adjacency is {}x{}", n, adjacency.ncols())));
        }
        if features.nrows() != n {
            return Err(Error::shape(
                "graph",
                format!("feature matrix has {} rows for {} nodes", features.nrows(), n),
            ));
        }
        if labels.len() != n {
            return Err(Error::shape("graph", format!("{} labels for {} nodes", labels.len(), n)));
        }
        for i in 0..n {
            adjacency[[i, i]] = T::zero();
            for j in (i + 1)..n {
                let a = adjacency[[i, j]];
                if a != adjacency[[j, i]] {
                    return Err(Error::Config(format!("adjacency not symmetric at ({i}, {j})")));
                }
                if !(a >= T::zero() && a <= T::one()) {
                    return Err(Error::Config(format!("adjacency entry ({i}, {j}) = {a} outside [0, 1]")));
                }
            }
        }
        let n_classes = labels.iter().flatten().map(|&c| c + 1).max().unwrap_or(0);
        Ok(Graph {
            adjacency,
            features,
            labels,
            n_classes,
            masks: Masks::empty(n),
            node_names: (0..n).map(|i| i.to_string()).collect(),
            class_names: (0..n_classes).map(|c| c.to_string()).collect(),
        })
    }

    /// Builds a graph from an undirected edge list with unit weights.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        features: Array2<T>,
        labels: Vec<Option<usize>>,
    ) -> Result<Self> {
        let mut adj = Array2::zeros((n, n));
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::NodeMismatch(format!("edge ({u}, {v}) out of range for {n} nodes")));
            }
            if u != v {
                adj[[u, v]] = T::one();
                adj[[v, u]] = T::one();
            }
        }
        Graph::new(adj, features, labels)
    }

    pub fn with_masks(mut self, masks: Masks) -> Result<Self> {
        masks.validate(self.n_nodes())?;
        self.masks = masks;
        Ok(self)
    }

    pub fn with_node_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_nodes() {
            return Err(Error::shape("graph", "node name count differs from node count"));
        }
        self.node_names = names;
        Ok(self)
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() < self.n_classes {
            return Err(Error::shape("graph", "fewer class names than classes"));
        }
        self.n_classes = names.len();
        self.class_names = names;
        Ok(self)
    }

    /// Replaces the feature matrix, keeping everything else.
    pub fn with_features(mut self, features: Array2<T>) -> Result<Self> {
        if features.nrows() != self.n_nodes() {
            return Err(Error::shape("graph", "feature rows differ from node count"));
        }
        self.features = features;
        Ok(self)
    }

    /// Replaces the adjacency, keeping features, labels and masks.
    pub fn with_adjacency(self, adjacency: Array2<T>) -> Result<Self> {
        let Graph {
            features,
            labels,
            masks,
            node_names,
            class_names,
            ..
        } = self;
        let n_classes = class_names.len();
        let mut g = Graph::new(adjacency, features, labels)?;
        g.masks = masks;
        g.node_names = node_names;
        g.class_names = class_names;
        g.n_classes = g.n_classes.max(n_classes);
        Ok(g)
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn adjacency(&self) -> &Array2<T> {
        &self.adjacency
    }

    pub fn features(&self) -> &Array2<T> {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> Option<usize> {
        self.labels[node]
    }

    pub fn masks(&self) -> &Masks {
        &self.masks
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[[u, v]] > T::zero()
    }

    /// Undirected edges `(i, j)` with `i < j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n_nodes();
        let mut out = Vec::new();
        for i in 0..n {
            let row = self.adjacency.row(i);
            for j in (i + 1)..n {
                if row[j] > T::zero() {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn n_edges(&self) -> usize {
        let nnz = self.adjacency.iter().filter(|&&a| a > T::zero()).count();
        nnz / 2
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency
            .row(node)
            .into_iter()
            .enumerate()
            .filter(|(_, &a)| a > T::zero())
            .map(|(j, _)| j)
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency
            .axis_iter(Axis(0))
            .map(|r| r.iter().filter(|&&a| a > T::zero()).count())
            .collect()
    }

    /// Labels of every node, failing on the first unlabeled one.
    pub fn require_labels(&self, nodes: &[usize]) -> Result<Vec<usize>> {
        nodes.iter().map(|&i| self.labels[i].ok_or(Error::MissingLabel(i))).collect()
    }

    /// Subgraph induced on `nodes`, reindexed in the given order.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Self> {
        let k = nodes.len();
        let mut adj = Array2::zeros((k, k));
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                adj[[a, b]] = self.adjacency[[i, j]];
            }
        }
        let features = self.features.select(Axis(0), nodes);
        let labels = nodes.iter().map(|&i| self.labels[i]).collect();
        let mut g = Graph::new(adj, features, labels)?;
        g.masks = self.masks.select(nodes);
        g.node_names = nodes.iter().map(|&i| self.node_names[i].clone()).collect();
        g.class_names = self.class_names.clone();
        g.n_classes = self.n_classes;
        Ok(g)
    }

    /// Same graph in another scalar type.
    pub fn cast<U: Scalar>(&self) -> Graph<U> {
        Graph {
            adjacency: self.adjacency.mapv(|v| U::of(v.to_f64_lossy())),
            features: self.features.mapv(|v| U::of(v.to_f64_lossy())),
            labels: self.labels.clone(),
            n_classes: self.n_classes,
            masks: self.masks.clone(),
            node_names: self.node_names.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Copy of this graph with features rescaled row-wise.
    pub fn normalized(&self, norm: FeatureNorm) -> Self {
        let mut g = self.clone();
        norm.apply(&mut g.features);
        g
    }

    /// Replaces features with one-hot node indices, for graphs that ship
    /// without attributes (e.g. Polblogs). Experimental.
    pub fn with_identity_features(mut self) -> Self {
        self.features = Array2::eye(self.n_nodes());
        self
    }
}

/// Row-wise feature preprocessing applied before training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureNorm {
    #[default]
    None,
    /// Each row divided by its sum.
    Row,
    /// Each row divided by its Euclidean norm.
    L2,
}

impl FeatureNorm {
    pub fn apply<T: Scalar>(self, features: &mut Array2<T>) {
        if self == FeatureNorm::None {
            return;
        }
        for mut row in features.axis_iter_mut(Axis(0)) {
            let scale = match self {
                FeatureNorm::Row => row.sum(),
                FeatureNorm::L2 => row.iter().map(|&v| v * v).sum::<T>().sqrt(),
                FeatureNorm::None => T::one(),
            };
            if scale > T::zero() {
                row.mapv_inplace(|v| v / scale);
            }
        }
    }
}

impl std::str::FromStr for FeatureNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FeatureNorm::None),
            "row" => Ok(FeatureNorm::Row),
            "l2" => Ok(FeatureNorm::L2),
            other => Err(Error::Config(format!("unknown feature normalization '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path4() -> Graph<f64> {
        Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)], Array2::zeros((4, 2)), vec![Some(0); 4]).unwrap()
    }

    #[test]
    fn rejects_asymmetric_adjacency() {
        let adj = array![[0.0, 1.0], [0.0, 0.0]];
        let err = Graph::new(adj, Array2::zeros((2, 1)), vec![Some(0), Some(1)]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn rejects_out_of_range_weights() {
        let adj = array![[0.0, 1.5], [1.5, 0.0]];
        assert!(Graph::new(adj, Array2::zeros((2, 1)), vec![Some(0), Some(1)]).is_err());
    }

    #[test]
    fn rejects_feature_row_mismatch() {
        let adj = Array2::<f64>::zeros((3, 3));
        assert!(matches!(
            Graph::new(adj, Array2::zeros((2, 1)), vec![Some(0); 3]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn diagonal_is_cleared() {
        let adj = array![[1.0, 1.0], [1.0, 1.0]];
        let g = Graph::new(adj, Array2::zeros((2, 1)), vec![Some(0), Some(0)]).unwrap();
        assert_eq!(g.adjacency()[[0, 0]], 0.0);
        assert_eq!(g.n_edges(), 1);
    }

    #[test]
    fn edge_listing() {
        let g = path4();
        assert_eq!(g.edges(), vec![(0, 1), (1, 2), (2, 3)]);
        assert_eq!(g.degrees(), vec![1, 2, 2, 1]);
        assert_eq!(g.neighbors(1).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn masks_must_be_disjoint() {
        assert!(Masks::from_indices(3, &[0], &[0], &[]).is_err());
        let m = Masks::from_indices(3, &[0], &[1], &[2]).unwrap();
        assert_eq!(m.test_indices(), vec![2]);
    }

    #[test]
    fn feature_normalization() {
        let mut x: Array2<f64> = array![[1.0, 1.0, 0.0], [0.0, 0.0, 0.0], [3.0, 0.0, 4.0]];
        let mut y = x.clone();
        FeatureNorm::Row.apply(&mut x);
        assert_eq!(x.row(0).to_vec(), vec![0.5, 0.5, 0.0]);
        assert_eq!(x.row(1).to_vec(), vec![0.0, 0.0, 0.0]);
        FeatureNorm::L2.apply(&mut y);
        assert!((y[[2, 0]] - 0.6).abs() < 1e-15 && (y[[2, 2]] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn induced_subgraph_reindexes() {
        let g = path4();
        let s = g.induced_subgraph(&[3, 2]).unwrap();
        assert_eq!(s.n_nodes(), 2);
        assert!(s.has_edge(0, 1));
        assert_eq!(s.node_names(), &["3".to_string(), "2".to_string()]);
    }
}
