use std::ops::Range;
use std::sync::Arc;

use super::Graph;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Directed edge list grouped by destination node (CSR over incoming edges).
///
/// Every undirected edge `{i, j}` contributes `i -> j` and `j -> i`. Optional
/// self-loops `v -> v` are added for every node. Within a destination group,
/// edges are ordered by source index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeIndex {
    n_nodes: usize,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    offsets: Arc<[usize]>,
    undirected: Arc<[Option<usize>]>,
}

impl EdgeIndex {
    /// `undirected[k]` must be an unordered pair without self-loops;
    /// the returned index remembers `k` for both orientations.
    pub fn new(n_nodes: usize, undirected: &[(usize, usize)], self_loops: bool) -> Self {
        let mut directed: Vec<(usize, usize, Option<usize>)> =
            Vec::with_capacity(2 * undirected.len() + if self_loops { n_nodes } else { 0 });
        for (k, &(i, j)) in undirected.iter().enumerate() {
            debug_assert!(i != j && i < n_nodes && j < n_nodes);
            directed.push((i, j, Some(k)));
            directed.push((j, i, Some(k)));
        }
        if self_loops {
            directed.extend((0..n_nodes).map(|v| (v, v, None)));
        }
        directed.sort_unstable_by_key(|&(s, d, _)| (d, s));
        let mut offsets = vec![0usize; n_nodes + 1];
        for &(_, d, _) in &directed {
            offsets[d + 1] += 1;
        }
        for v in 0..n_nodes {
            offsets[v + 1] += offsets[v];
        }
        EdgeIndex {
            n_nodes,
            src: directed.iter().map(|e| e.0).collect(),
            dst: directed.iter().map(|e| e.1).collect(),
            offsets: offsets.into(),
            undirected: directed.iter().map(|e| e.2).collect(),
        }
    }

    pub fn from_graph<T: Scalar>(g: &Graph<T>, self_loops: bool) -> Self {
        EdgeIndex::new(g.n_nodes(), &g.edges(), self_loops)
    }

    /// Keeps only the directed edges for which `keep(edge)` holds.
    pub fn filtered(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let mut src = Vec::with_capacity(self.src.len());
        let mut dst = Vec::with_capacity(self.src.len());
        let mut undirected = Vec::with_capacity(self.src.len());
        let mut offsets = vec![0usize; self.n_nodes + 1];
        for e in 0..self.src.len() {
            if keep(e) {
                src.push(self.src[e]);
                dst.push(self.dst[e]);
                undirected.push(self.undirected[e]);
                offsets[self.dst[e] + 1] += 1;
            }
        }
        for v in 0..self.n_nodes {
            offsets[v + 1] += offsets[v];
        }
        EdgeIndex {
            n_nodes: self.n_nodes,
            src: src.into(),
            dst: dst.into(),
            offsets: offsets.into(),
            undirected: undirected.into(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }

    pub fn src(&self) -> &[usize] {
        &self.src
    }

    pub fn dst(&self) -> &[usize] {
        &self.dst
    }

    /// Undirected edge each directed edge came from; `None` for self-loops.
    pub fn undirected(&self) -> &[Option<usize>] {
        &self.undirected
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Shared handles for recording on a tape without copying.
    pub fn src_shared(&self) -> Arc<[usize]> {
        Arc::clone(&self.src)
    }

    pub fn dst_shared(&self) -> Arc<[usize]> {
        Arc::clone(&self.dst)
    }

    pub fn offsets_shared(&self) -> Arc<[usize]> {
        Arc::clone(&self.offsets)
    }

    /// Range of edge positions whose destination is `v`.
    pub fn segment(&self, v: usize) -> Range<usize> {
        self.offsets[v]..self.offsets[v + 1]
    }

    pub fn is_self_loop(&self, e: usize) -> bool {
        self.src[e] == self.dst[e]
    }

    /// Fails on the first node without incoming edges.
    pub fn check_segments(&self) -> Result<()> {
        match (0..self.n_nodes).find(|&v| self.offsets[v] == self.offsets[v + 1]) {
            Some(v) => Err(Error::EmptySegment(v)),
            None => Ok(()),
        }
    }

    /// Position of the directed edge `u -> v`, if present.
    pub fn find(&self, u: usize, v: usize) -> Option<usize> {
        let seg = self.segment(v);
        self.src[seg.clone()].binary_search(&u).ok().map(|k| seg.start + k)
    }
}
