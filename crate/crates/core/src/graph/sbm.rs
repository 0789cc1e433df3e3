use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AttributedGraph, EdgeSet};
use crate::error::{Error, Result};

/// Planted-partition benchmark: Bernoulli edges with block-dependent
/// probabilities and Gaussian features around per-class means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub class_sizes: Vec<usize>,
    pub intra_edge_prob: f64,
    pub inter_edge_prob: f64,
    pub feature_dim: usize,
    pub class_mean_separation: f64,
    pub feature_noise_std: f64,
    pub seed: u64,
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("intra_edge_prob", self.intra_edge_prob),
            ("inter_edge_prob", self.inter_edge_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        if self.intra_edge_prob <= self.inter_edge_prob {
            return Err(Error::invalid(
                "intra_edge_prob must exceed inter_edge_prob",
            ));
        }
        if self.class_sizes.is_empty() || self.class_sizes.contains(&0) {
            return Err(Error::invalid("class sizes must be positive"));
        }
        if self.feature_dim < self.class_sizes.len() {
            return Err(Error::invalid(format!(
                "feature_dim {} cannot hold {} orthogonal class means",
                self.feature_dim,
                self.class_sizes.len()
            )));
        }
        if !(self.feature_noise_std >= 0.0 && self.feature_noise_std.is_finite()) {
            return Err(Error::invalid("feature_noise_std must be finite and >= 0"));
        }
        if !self.class_mean_separation.is_finite() {
            return Err(Error::invalid("class_mean_separation must be finite"));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.class_sizes.iter().sum()
    }
}

/// Samples a block-model graph. Class `c` has mean `separation * e_c`; nodes
/// are numbered class by class. Returns the graph (fully labeled, labels
/// hidden from training) and the ground-truth class of every node.
pub fn generate_sbm(spec: &SbmSpec) -> Result<(AttributedGraph, Vec<usize>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let truth: Vec<usize> = spec
        .class_sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &size)| std::iter::repeat_n(c, size))
        .collect();
    let n = truth.len();

    let mut edges = EdgeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if truth[i] == truth[j] {
                spec.intra_edge_prob
            } else {
                spec.inter_edge_prob
            };
            if rng.random::<f64>() < p {
                edges.insert(i, j);
            }
        }
    }

    let noise =
        Normal::new(0.0, spec.feature_noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut features = Array2::zeros((n, spec.feature_dim));
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        for x in row.iter_mut() {
            *x = noise.sample(&mut rng);
        }
        row[truth[i]] += spec.class_mean_separation;
    }

    let labels = truth.iter().map(|&c| Some(c)).collect();
    let g = AttributedGraph::new(features, edges, labels)?;
    Ok((g, truth))
}
