//! Open-world clustering accuracy, class-count error and a raw-feature
//! k-means baseline.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::best_matching;
use crate::error::{Error, Result};
use crate::graph::{AttributedGraph, OpenWorldSplit};
use crate::kmeans::kmeans;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenWorldMetrics {
    pub acc_all: f64,
    /// 0 when no evaluated node belongs to a known class.
    pub acc_known: f64,
    /// 0 when no evaluated node belongs to a novel class.
    pub acc_novel: f64,
    pub predicted_class_count: usize,
    pub class_count_mae: Option<f64>,
}

/// Best injective group-to-class matching over all nodes, scored on all,
/// known-class and novel-class nodes. `predicted_class_count` is the number
/// of distinct predicted groups.
pub fn open_world_accuracy(
    predictions: &[usize],
    truth: &[usize],
    known_classes: &[usize],
) -> Result<OpenWorldMetrics> {
    if truth.is_empty() {
        return Err(Error::Empty("test node set"));
    }
    if predictions.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} nodes",
            predictions.len(),
            truth.len()
        )));
    }
    let mapping = global_matching(predictions, truth);
    let known: BTreeSet<usize> = known_classes.iter().copied().collect();
    let (mut hit_known, mut n_known, mut hit_novel, mut n_novel) = (0usize, 0usize, 0usize, 0usize);
    for (g, &t) in predictions.iter().zip(truth) {
        let hit = mapping.get(g) == Some(&t);
        if known.contains(&t) {
            n_known += 1;
            hit_known += hit as usize;
        } else {
            n_novel += 1;
            hit_novel += hit as usize;
        }
    }
    let frac = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    Ok(OpenWorldMetrics {
        acc_all: (hit_known + hit_novel) as f64 / truth.len() as f64,
        acc_known: frac(hit_known, n_known),
        acc_novel: frac(hit_novel, n_novel),
        predicted_class_count: predictions.iter().collect::<BTreeSet<_>>().len(),
        class_count_mae: None,
    })
}

/// Group-to-class mapping that maximizes agreement over all nodes.
pub fn global_matching(predictions: &[usize], truth: &[usize]) -> BTreeMap<usize, usize> {
    let n_groups = predictions.iter().max().map_or(0, |&m| m + 1);
    best_matching(predictions, truth, n_groups).0
}

/// `|estimated - truth|`.
pub fn class_count_error(estimated: f64, truth: f64) -> f64 {
    (estimated - truth).abs()
}

/// Mean absolute class-count error over runs.
pub fn class_count_mae(estimates: &[usize], truth: usize) -> Option<f64> {
    if estimates.is_empty() {
        return None;
    }
    let sum: f64 = estimates
        .iter()
        .map(|&e| class_count_error(e as f64, truth as f64))
        .sum();
    Some(sum / estimates.len() as f64)
}

/// k-means (10 restarts) on the raw features of the test nodes; returns one
/// cluster id per entry of `split.test_nodes`.
pub fn kmeans_feature_baseline(
    g: &AttributedGraph,
    split: &OpenWorldSplit,
    n_clusters: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if n_clusters < 2 {
        return Err(Error::invalid(format!(
            "baseline needs at least 2 clusters, got {n_clusters}"
        )));
    }
    if split.test_nodes.len() < n_clusters {
        return Err(Error::invalid(format!(
            "{} test nodes cannot form {n_clusters} clusters",
            split.test_nodes.len()
        )));
    }
    let d = g.feature_dim();
    let mut data = Array2::zeros((split.test_nodes.len(), d));
    for (row, &i) in split.test_nodes.iter().enumerate() {
        if i >= g.node_count() {
            return Err(Error::NodeOutOfRange {
                index: i,
                node_count: g.node_count(),
            });
        }
        data.row_mut(row).assign(&g.features.row(i));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(kmeans(&data, n_clusters, 10, 300, &mut rng).assignments)
}
