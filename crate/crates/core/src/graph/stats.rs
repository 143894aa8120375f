use std::collections::VecDeque;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, Masks};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Counts of same-label and different-label edges.
///
/// Each undirected edge is counted once. [`LinkStats::directed_same`] and
/// [`LinkStats::directed_diff`] give the doubled view in which every edge is
/// seen from both endpoints; the ratio is the same under both conventions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub n_same: usize,
    pub n_diff: usize,
    /// `n_same / n_diff`, `None` when there are no different-label edges.
    pub ratio: Option<f64>,
}

impl LinkStats {
    pub fn new(n_same: usize, n_diff: usize) -> Self {
        let ratio = (n_diff > 0).then(|| n_same as f64 / n_diff as f64);
        LinkStats { n_same, n_diff, ratio }
    }

    pub fn directed_same(&self) -> usize {
        2 * self.n_same
    }

    pub fn directed_diff(&self) -> usize {
        2 * self.n_diff
    }

    pub fn total(&self) -> usize {
        self.n_same + self.n_diff
    }
}

/// Splits the edges of `g` by endpoint-label equality.
pub fn link_ratio<T: Scalar>(g: &Graph<T>) -> Result<LinkStats> {
    let (mut same, mut diff) = (0, 0);
    for (i, j) in g.edges() {
        let a = g.label(i).ok_or(Error::MissingLabel(i))?;
        let b = g.label(j).ok_or(Error::MissingLabel(j))?;
        if a == b {
            same += 1;
        } else {
            diff += 1;
        }
    }
    Ok(LinkStats::new(same, diff))
}

/// `tr(Xᵀ L X)` with `L = D - A`, accumulated as `Σᵢ xᵢᵀ (L X)ᵢ` over the
/// nonzero pattern of `A`.
pub fn laplacian_smoothness<T: Scalar>(adjacency: &Array2<T>, features: &Array2<T>) -> Result<T> {
    let n = adjacency.nrows();
    if adjacency.ncols() != n || features.nrows() != n {
        return Err(Error::shape(
            "laplacian_smoothness",
            format!(
                "adjacency {}x{} vs features {}x{}",
                n,
                adjacency.ncols(),
                features.nrows(),
                features.ncols()
            ),
        ));
    }
    let mut total = T::zero();
    for i in 0..n {
        let xi = features.row(i);
        let self_sq = xi.dot(&xi);
        for (j, &a) in adjacency.row(i).iter().enumerate() {
            if a != T::zero() {
                total += a * (self_sq - xi.dot(&features.row(j)));
            }
        }
    }
    Ok(total)
}

/// Subgraph induced on the largest connected component. Ties go to the
/// component containing the lowest node index.
pub fn extract_lcc<T: Scalar>(g: &Graph<T>) -> Result<Graph<T>> {
    let n = g.n_nodes();
    let mut component = vec![usize::MAX; n];
    let mut best: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let mut members = vec![start];
        component[start] = start;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            for v in g.neighbors(u) {
                if component[v] == usize::MAX {
                    component[v] = start;
                    members.push(v);
                    queue.push_back(v);
                }
            }
        }
        if members.len() > best.len() {
            best = members;
        }
    }
    if best.len() == n {
        return Ok(g.clone());
    }
    best.sort_unstable();
    g.induced_subgraph(&best)
}

/// Seeded random train/validation/test split over labeled nodes.
///
/// Sizes follow the floor rule: `⌊train_frac·n⌋` and `⌊val_frac·n⌋`, the
/// rest is test.
pub fn random_split<T: Scalar>(g: &Graph<T>, train_frac: f64, val_frac: f64, seed: u64) -> Result<Graph<T>> {
    if !(train_frac > 0.0) || !(val_frac >= 0.0) {
        return Err(Error::Config(format!(
            "split fractions must be positive (train {train_frac}, val {val_frac})"
        )));
    }
    if train_frac + val_frac > 1.0 + 1e-12 {
        return Err(Error::Config(format!(
            "split fractions sum to {} > 1",
            train_frac + val_frac
        )));
    }
    let mut nodes: Vec<usize> = (0..g.n_nodes()).filter(|&i| g.label(i).is_some()).collect();
    let n = nodes.len();
    let n_train = floor_count(train_frac, n);
    let n_val = floor_count(val_frac, n);
    if n_train == 0 {
        return Err(Error::Config("split leaves no training nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    nodes.shuffle(&mut rng);
    let masks = Masks::from_indices(
        g.n_nodes(),
        &nodes[..n_train],
        &nodes[n_train..n_train + n_val],
        &nodes[n_train + n_val..],
    )?;
    g.clone().with_masks(masks)
}

fn floor_count(frac: f64, n: usize) -> usize {
    ((frac * n as f64) + 1e-9).floor().min(n as f64) as usize
}
