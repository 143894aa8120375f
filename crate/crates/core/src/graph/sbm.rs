use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stochastic block model with Gaussian class-conditional features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub n_nodes: usize,
    pub n_classes: usize,
    /// Link probability for two nodes of the same class.
    pub p_same: f64,
    /// Link probability for two nodes of different classes.
    pub p_diff: f64,
    pub feature_dim: usize,
    /// Euclidean distance between any two class means (unit noise).
    pub feature_signal: f64,
    pub seed: u64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        SbmSpec {
            n_nodes: 1000,
            n_classes: 2,
            p_same: 0.01,
            p_diff: 0.01,
            feature_dim: 16,
            feature_signal: 1.0,
            seed: 0,
        }
    }
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 || self.n_classes == 0 || self.feature_dim == 0 {
            return Err(Error::Config("SBM sizes must be positive".into()));
        }
        for (name, p) in [("p_same", self.p_same), ("p_diff", self.p_diff)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.feature_signal >= 0.0) {
            return Err(Error::Config("feature_signal must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let base = self.n_nodes / self.n_classes;
        let extra = self.n_nodes % self.n_classes;
        (0..self.n_classes).map(|c| base + usize::from(c < extra)).collect()
    }

    /// Numbers of (same-class, different-class) unordered node pairs.
    pub fn pair_counts(&self) -> (f64, f64) {
        let sizes = self.class_sizes();
        let same: f64 = sizes.iter().map(|&s| (s * s.saturating_sub(1)) as f64 / 2.0).sum();
        let n = self.n_nodes as f64;
        (same, n * (n - 1.0) / 2.0 - same)
    }

    /// Expected numbers of same-label and different-label edges.
    pub fn expected_links(&self) -> (f64, f64) {
        let (same, diff) = self.pair_counts();
        (self.p_same * same, self.p_diff * diff)
    }

    /// Chooses `p_same`, `p_diff` so that the expected different-label edge
    /// count is `diff_edges` and the expected same/different ratio is `ratio`.
    pub fn with_target_ratio(mut self, ratio: f64, diff_edges: f64) -> Result<Self> {
        let (same_pairs, diff_pairs) = self.pair_counts();
        if !(ratio > 0.0) || !(diff_edges > 0.0) || diff_pairs == 0.0 || same_pairs == 0.0 {
            return Err(Error::Config(format!("cannot target ratio {ratio} for this SBM")));
        }
        self.p_diff = diff_edges / diff_pairs;
        self.p_same = ratio * diff_edges / same_pairs;
        if self.p_same > 1.0 || self.p_diff > 1.0 {
            return Err(Error::Config(format!(
                "ratio {ratio} with {diff_edges} cross-class edges is unattainable for {} nodes",
                self.n_nodes
            )));
        }
        Ok(self)
    }
}

/// Samples a labeled SBM graph. Every unordered pair is linked independently;
/// node `i`'s features are `μ_{y_i} + ε` with `ε ~ N(0, I)` and class means
/// placed on scaled coordinate axes.
pub fn sbm_generate<T: Scalar>(spec: &SbmSpec) -> Result<Graph<T>> {
    spec.validate()?;
    let n = spec.n_nodes;
    let mut labels = Vec::with_capacity(n);
    for (c, &size) in spec.class_sizes().iter().enumerate() {
        labels.extend(std::iter::repeat_n(c, size));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut adj = Array2::<T>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { spec.p_same } else { spec.p_diff };
            if rng.random::<f64>() < p {
                adj[[i, j]] = T::one();
                adj[[j, i]] = T::one();
            }
        }
    }

    let offset = spec.feature_signal / std::f64::consts::SQRT_2;
    let mut features = Array2::<T>::zeros((n, spec.feature_dim));
    for i in 0..n {
        for k in 0..spec.feature_dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let mean = if labels[i] % spec.feature_dim == k { offset } else { 0.0 };
            features[[i, k]] = T::of(mean + noise);
        }
    }

    let g = Graph::new(adj, features, labels.into_iter().map(Some).collect())?;
    let names = (0..spec.n_classes).map(|c| format!("block{c}")).collect();
    g.with_class_names(names)
}
