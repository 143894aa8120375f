//! Edge poisoning: generators, application, and import of poisoned graphs.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{load_edge_list, Graph};
use crate::scalar::Scalar;

/// Edges added to and removed from a clean graph, as unordered pairs
/// stored with the smaller index first and sorted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub added: Vec<(usize, usize)>,
    pub removed: Vec<(usize, usize)>,
    pub rate: f64,
    pub seed: u64,
}

impl Perturbation {
    pub fn new(mut added: Vec<(usize, usize)>, mut removed: Vec<(usize, usize)>, rate: f64, seed: u64) -> Self {
        for list in [&mut added, &mut removed] {
            for e in list.iter_mut() {
                *e = ordered(e.0, e.1);
            }
            list.sort_unstable();
            list.dedup();
        }
        Perturbation { added, removed, rate, seed }
    }

    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }

    pub fn len(&self) -> usize {
        self.added.len() + self.removed.len()
    }

    /// Swaps added and removed, undoing the perturbation.
    pub fn inverse(&self) -> Self {
        Perturbation {
            added: self.removed.clone(),
            removed: self.added.clone(),
            rate: self.rate,
            seed: self.seed,
        }
    }

    /// Checks the perturbation against the graph it is meant to modify.
    pub fn validate<T: Scalar>(&self, g: &Graph<T>) -> Result<()> {
        let n = g.n_nodes();
        let added: HashSet<_> = self.added.iter().collect();
        for &(u, v) in self.added.iter().chain(&self.removed) {
            if u >= n || v >= n || u == v {
                return Err(Error::Perturbation(format!("pair ({u}, {v}) invalid for {n} nodes")));
            }
        }
        if let Some(&(u, v)) = self.added.iter().find(|&&(u, v)| g.has_edge(u, v)) {
            return Err(Error::Perturbation(format!("added pair ({u}, {v}) is already an edge")));
        }
        if let Some(&(u, v)) = self.removed.iter().find(|&&(u, v)| !g.has_edge(u, v)) {
            return Err(Error::Perturbation(format!("removed pair ({u}, {v}) is not an edge")));
        }
        if let Some(&(u, v)) = self.removed.iter().find(|e| added.contains(e)) {
            return Err(Error::Perturbation(format!("pair ({u}, {v}) both added and removed")));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Perturbation(e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Perturbation = serde_json::from_str(&text).map_err(|e| Error::Perturbation(e.to_string()))?;
        Ok(Perturbation::new(p.added, p.removed, p.rate, p.seed))
    }
}

fn ordered(u: usize, v: usize) -> (usize, usize) {
    if u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

/// `⌊rate·|E|⌋`.
pub fn budget<T: Scalar>(g: &Graph<T>, rate: f64) -> Result<usize> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::Config(format!("perturbation rate {rate} must be nonnegative")));
    }
    Ok((rate * g.n_edges() as f64 + 1e-9).floor() as usize)
}

/// Samples `count` distinct non-edges satisfying `accept`, uniformly.
fn sample_non_edges<T: Scalar, R: Rng>(
    g: &Graph<T>,
    count: usize,
    what: &'static str,
    rng: &mut R,
    accept: impl Fn(usize, usize) -> bool,
) -> Result<Vec<(usize, usize)>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let n = g.n_nodes();
    let total_pairs = n * n.saturating_sub(1) / 2;
    let free = total_pairs - g.n_edges();
    // Rejection sampling is fast while candidates are plentiful; otherwise
    // enumerate them.
    if count.saturating_mul(4) <= free && n >= 2 {
        let mut chosen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0usize;
        let limit = 200 * count + 10_000;
        while out.len() < count && attempts < limit {
            attempts += 1;
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            if u == v {
                continue;
            }
            let e = ordered(u, v);
            if g.has_edge(e.0, e.1) || !accept(e.0, e.1) || !chosen.insert(e) {
                continue;
            }
            out.push(e);
        }
        if out.len() == count {
            return Ok(out);
        }
    }
    let mut candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| ((u + 1)..n).map(move |v| (u, v)))
        .filter(|&(u, v)| !g.has_edge(u, v) && accept(u, v))
        .collect();
    if candidates.len() < count {
        return Err(Error::InsufficientCandidates {
            what,
            needed: count,
            available: candidates.len(),
        });
    }
    let (picked, _) = candidates.partial_shuffle(rng, count);
    Ok(picked.to_vec())
}

/// Adds `⌊rate·|E|⌋` edges drawn uniformly from the non-edges.
pub fn random_attack<T: Scalar>(g: &Graph<T>, rate: f64, seed: u64) -> Result<Perturbation> {
    let b = budget(g, rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let added = sample_non_edges(g, b, "non-edges", &mut rng, |_, _| true)?;
    Ok(Perturbation::new(added, Vec::new(), rate, seed))
}

/// Toggles `⌊rate·|E|⌋` distinct node pairs drawn uniformly from all pairs:
/// edges are removed, non-edges added.
pub fn random_flip_attack<T: Scalar>(g: &Graph<T>, rate: f64, seed: u64) -> Result<Perturbation> {
    let b = budget(g, rate)?;
    let n = g.n_nodes();
    let total_pairs = n * n.saturating_sub(1) / 2;
    if b > total_pairs {
        return Err(Error::InsufficientCandidates {
            what: "node pairs",
            needed: b,
            available: total_pairs,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = HashSet::with_capacity(b);
    while chosen.len() < b {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u != v {
            chosen.insert(ordered(u, v));
        }
    }
    let mut pairs: Vec<_> = chosen.into_iter().collect();
    pairs.sort_unstable();
    let (removed, added): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|&(u, v)| g.has_edge(u, v));
    Ok(Perturbation::new(added, removed, rate, seed))
}

/// How a DICE budget is spent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiceMode {
    /// Half the budget removes same-label edges, the rest (rounded up) adds
    /// cross-label edges.
    #[default]
    Balanced,
    /// The whole budget adds cross-label edges.
    AddOnly,
}

impl std::str::FromStr for DiceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(DiceMode::Balanced),
            "add-only" | "add_only" => Ok(DiceMode::AddOnly),
            other => Err(Error::Config(format!("unknown DICE mode '{other}'"))),
        }
    }
}

/// Label-aware poisoning: removes same-label edges and connects
/// differently labeled nodes, with budget `⌊rate·|E|⌋`.
pub fn dice_attack<T: Scalar>(g: &Graph<T>, rate: f64, seed: u64, mode: DiceMode) -> Result<Perturbation> {
    let b = budget(g, rate)?;
    let labels: Vec<usize> = g.require_labels(&(0..g.n_nodes()).collect::<Vec<_>>())?;
    let (n_remove, n_add) = match mode {
        DiceMode::Balanced => (b / 2, b - b / 2),
        DiceMode::AddOnly => (0, b),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let same: Vec<(usize, usize)> = g
        .edges()
        .into_iter()
        .filter(|&(u, v)| labels[u] == labels[v])
        .collect();
    if same.len() < n_remove {
        return Err(Error::InsufficientCandidates {
            what: "same-label edges",
            needed: n_remove,
            available: same.len(),
        });
    }
    let removed: Vec<_> = same.choose_multiple(&mut rng, n_remove).copied().collect();
    let added = sample_non_edges(g, n_add, "cross-label non-edges", &mut rng, |u, v| labels[u] != labels[v])?;
    Ok(Perturbation::new(added, removed, rate, seed))
}

/// Returns a copy of `g` with the perturbation's edges toggled. Added
/// edges get weight 1.
pub fn apply_perturbation<T: Scalar>(g: &Graph<T>, p: &Perturbation) -> Result<Graph<T>> {
    p.validate(g)?;
    let mut adj = g.adjacency().clone();
    for &(u, v) in &p.added {
        adj[[u, v]] = T::one();
        adj[[v, u]] = T::one();
    }
    for &(u, v) in &p.removed {
        adj[[u, v]] = T::zero();
        adj[[v, u]] = T::zero();
    }
    g.clone().with_adjacency(adj)
}

/// Reads the full edge list of a poisoned version of `clean` and recovers
/// the perturbation by diffing. Node ids are indices into `clean`;
/// self-loops in the file are ignored.
pub fn load_perturbed<T: Scalar>(clean: &Graph<T>, edges_path: impl AsRef<Path>) -> Result<(Graph<T>, Perturbation)> {
    let n = clean.n_nodes();
    let mut poisoned: HashSet<(usize, usize)> = HashSet::new();
    for (u, v, w) in load_edge_list(edges_path)? {
        if u >= n || v >= n {
            return Err(Error::NodeMismatch(format!(
                "edge ({u}, {v}) references a node outside the clean graph's {n} nodes"
            )));
        }
        if u != v && w != 0.0 {
            poisoned.insert(ordered(u, v));
        }
    }
    let clean_edges: HashSet<(usize, usize)> = clean.edges().into_iter().collect();
    let added: Vec<_> = poisoned.difference(&clean_edges).copied().collect();
    let removed: Vec<_> = clean_edges.difference(&poisoned).copied().collect();
    let rate = if clean_edges.is_empty() {
        0.0
    } else {
        (added.len() + removed.len()) as f64 / clean_edges.len() as f64
    };
    let p = Perturbation::new(added, removed, rate, 0);
    let g = apply_perturbation(clean, &p)?;
    Ok((g, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{link_ratio, save_edge_list};
    use ndarray::Array2;

    fn two_blocks() -> Graph<f64> {
        // Two 5-cliques joined by one edge.
        let mut edges = Vec::new();
        for base in [0, 5] {
            for u in 0..5 {
                for v in (u + 1)..5 {
                    edges.push((base + u, base + v));
                }
            }
        }
        edges.push((4, 5));
        let labels = (0..10).map(|i| Some(i / 5)).collect();
        Graph::from_edges(10, &edges, Array2::zeros((10, 2)), labels).unwrap()
    }

    #[test]
    fn zero_rate_is_empty() {
        let g = two_blocks();
        assert!(random_attack(&g, 0.0, 1).unwrap().is_empty());
        assert!(dice_attack(&g, 0.0, 1, DiceMode::Balanced).unwrap().is_empty());
    }

    #[test]
    fn random_attack_adds_budget_non_edges() {
        let g = two_blocks();
        let p = random_attack(&g, 0.5, 3).unwrap();
        assert_eq!(p.added.len(), 10);
        assert!(p.removed.is_empty());
        p.validate(&g).unwrap();
        assert_eq!(p, random_attack(&g, 0.5, 3).unwrap());
    }

    #[test]
    fn random_attack_exhausting_non_edges_fails() {
        let g = two_blocks();
        // 45 pairs, 21 edges, 24 non-edges.
        assert_eq!(random_attack(&g, 24.0 / 21.0, 0).unwrap().added.len(), 24);
        assert!(matches!(
            random_attack(&g, 2.0, 0),
            Err(Error::InsufficientCandidates { .. })
        ));
    }

    #[test]
    fn flip_attack_toggles_pairs() {
        let g = two_blocks();
        let p = random_flip_attack(&g, 1.0, 5).unwrap();
        assert_eq!(p.len(), 21);
        p.validate(&g).unwrap();
    }

    #[test]
    fn dice_lowers_link_ratio() {
        let g = two_blocks();
        let before = link_ratio(&g).unwrap();
        let p = dice_attack(&g, 0.3, 2, DiceMode::Balanced).unwrap();
        assert_eq!((p.removed.len(), p.added.len()), (3, 3));
        let after = link_ratio(&apply_perturbation(&g, &p).unwrap()).unwrap();
        assert!(after.n_same < before.n_same && after.n_diff > before.n_diff);
        let add_only = dice_attack(&g, 0.3, 2, DiceMode::AddOnly).unwrap();
        assert_eq!((add_only.removed.len(), add_only.added.len()), (0, 6));
    }

    #[test]
    fn apply_and_undo() {
        let g = two_blocks();
        let p = dice_attack(&g, 0.4, 9, DiceMode::Balanced).unwrap();
        let h = apply_perturbation(&g, &p).unwrap();
        assert_eq!(h.n_edges(), g.n_edges() + p.added.len() - p.removed.len());
        let back = apply_perturbation(&h, &p.inverse()).unwrap();
        assert_eq!(back.adjacency(), g.adjacency());
        assert_eq!(apply_perturbation(&g, &Perturbation::default()).unwrap(), g);
    }

    #[test]
    fn inconsistent_perturbations_are_rejected() {
        let g = two_blocks();
        let bad_add = Perturbation::new(vec![(0, 1)], vec![], 0.0, 0);
        assert!(apply_perturbation(&g, &bad_add).is_err());
        let bad_remove = Perturbation::new(vec![], vec![(0, 9)], 0.0, 0);
        assert!(apply_perturbation(&g, &bad_remove).is_err());
        let self_loop = Perturbation::new(vec![(3, 3)], vec![], 0.0, 0);
        assert!(apply_perturbation(&g, &self_loop).is_err());
    }

    #[test]
    fn load_perturbed_recovers_the_diff() {
        let g = two_blocks();
        let p = dice_attack(&g, 0.4, 4, DiceMode::Balanced).unwrap();
        let h = apply_perturbation(&g, &p).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poisoned.csv");
        save_edge_list(&h, &path).unwrap();
        let (h2, q) = load_perturbed(&g, &path).unwrap();
        assert_eq!((&q.added, &q.removed), (&p.added, &p.removed));
        assert_eq!(h2.adjacency(), h.adjacency());

        save_edge_list(&g, &path).unwrap();
        assert!(load_perturbed(&g, &path).unwrap().1.is_empty());

        fs::write(&path, "src,dst\n0,10\n").unwrap();
        assert!(matches!(load_perturbed(&g, &path), Err(Error::NodeMismatch(_))));
    }

    #[test]
    fn json_round_trip() {
        let p = Perturbation::new(vec![(3, 1)], vec![(0, 2)], 0.1, 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        p.save(&path).unwrap();
        assert_eq!(Perturbation::load(&path).unwrap(), p);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"added\"") && text.contains("\"removed\""));
    }
}
