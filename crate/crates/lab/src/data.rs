use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rogat_core::attacks::{apply_perturbation, dice_attack, load_perturbed, random_attack, random_flip_attack};
use rogat_core::graph::{extract_lcc, link_ratio, load_csv_graph, load_linqs, random_split};
use rogat_core::{Graph, LinkStats, Perturbation, Scalar};

use crate::config::{AttackKind, ExperimentConfig};

fn find_with_extension(dir: &Path, ext: &str) -> Result<Option<PathBuf>> {
    let mut hits: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    hits.sort();
    match hits.len() {
        0 => Ok(None),
        1 => Ok(hits.pop()),
        _ => bail!("{} holds several .{ext} files", dir.display()),
    }
}

/// Reads the dataset directory, keeps the largest component if asked, and
/// normalizes features.
pub fn load_dataset<T: Scalar>(cfg: &ExperimentConfig) -> Result<Graph<T>> {
    let dir = &cfg.dataset;
    let content = find_with_extension(dir, "content")?;
    let cites = find_with_extension(dir, "cites")?;
    let g = match (content, cites) {
        (Some(content), Some(cites)) => {
            let imp = load_linqs::<T>(&content, &cites)?;
            if imp.skipped_links > 0 {
                log::info!("{}: skipped {} links to unknown nodes", dir.display(), imp.skipped_links);
            }
            imp.graph
        }
        _ => load_csv_graph::<T>(dir).with_context(|| format!("loading {}", dir.display()))?,
    };
    let g = if cfg.largest_component { extract_lcc(&g)? } else { g };
    Ok(g.normalized(cfg.feature_norm))
}

/// The perturbation used at `(rate, seed)`. Shared by every model of a cell
/// so that comparisons are paired.
pub fn perturbation<T: Scalar>(clean: &Graph<T>, cfg: &ExperimentConfig, rate: f64, seed: u64) -> Result<Perturbation> {
    Ok(match cfg.attack {
        AttackKind::Dice(mode) => dice_attack(clean, rate, seed, mode)?,
        AttackKind::Random => random_attack(clean, rate, seed)?,
        AttackKind::RandomFlip => random_flip_attack(clean, rate, seed)?,
        AttackKind::File => {
            let path = cfg.poisoned_edges.as_ref().expect("validated");
            load_perturbed(clean, path)?.1
        }
    })
}

/// Poisoned graph with a fresh split for `seed`, plus its link statistics.
pub struct Prepared<T> {
    pub graph: Graph<T>,
    pub perturbation: Perturbation,
    pub stats: LinkStats,
}

pub fn prepare<T: Scalar>(clean: &Graph<T>, cfg: &ExperimentConfig, rate: f64, seed: u64) -> Result<Prepared<T>> {
    let perturbation = if rate == 0.0 && cfg.attack != AttackKind::File {
        Perturbation::default()
    } else {
        perturbation(clean, cfg, rate, seed)?
    };
    let poisoned = apply_perturbation(clean, &perturbation)?;
    let stats = link_ratio(&poisoned)?;
    let graph = random_split(&poisoned, cfg.train_frac, cfg.val_frac, seed)?;
    Ok(Prepared {
        graph,
        perturbation,
        stats,
    })
}
