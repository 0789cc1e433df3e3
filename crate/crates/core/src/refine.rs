//! Structure refinement from pseudo-labels, stochastic graph augmentation and
//! the cross-view consistency loss.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::GroupAssignment;
use crate::error::{Error, Result};
use crate::graph::EdgeSet;
use crate::prototype::{RepresentativenessMatrix, PROB_FLOOR};
use crate::pseudo::ConfidentSet;

/// Largest per-edge drop probability.
pub const MAX_DROP_PROB: f64 = 0.9;

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// Mean over layers of the cosine between the prototype-score rows of each
/// pair's endpoints.
pub fn node_similarity(
    r_layers: &[RepresentativenessMatrix],
    pairs: &[(usize, usize)],
) -> Result<Vec<f64>> {
    let Some(first) = r_layers.first() else {
        return Err(Error::Empty("representativeness layers"));
    };
    let n = first.nodes();
    if r_layers.iter().any(|r| r.nodes() != n) {
        return Err(Error::Dimension(
            "layers cover different node counts".into(),
        ));
    }
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= n || j >= n) {
        return Err(Error::NodeOutOfRange {
            index: i.max(j),
            node_count: n,
        });
    }
    let l = r_layers.len() as f64;
    Ok(pairs
        .iter()
        .map(|&(i, j)| {
            r_layers
                .iter()
                .map(|r| cosine(r.0.row(i), r.0.row(j)))
                .sum::<f64>()
                / l
        })
        .collect())
}

/// Floor of `mu * count`, tolerant of floating-point undershoot.
fn recovery_quota(mu: f64, count: usize) -> usize {
    ((mu * count as f64 + 1e-9).floor().max(0.0) as usize).min(count)
}

/// For every pseudo-class, the `floor(mu * |pairs|)` non-adjacent
/// intra-class pairs with the lowest node similarity (ties to the
/// lexicographically smaller pair).
pub fn recover_edges(
    confident: &ConfidentSet,
    r_layers: &[RepresentativenessMatrix],
    mu: f64,
    current: &EdgeSet,
) -> Result<EdgeSet> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::invalid(format!("mu must lie in [0, 1], got {mu}")));
    }
    let mut recovered = EdgeSet::new();
    for members in &confident.groups {
        let mut nodes: Vec<usize> = members.iter().map(|&(i, _)| i).collect();
        nodes.sort_unstable();
        let mut pairs = Vec::new();
        for (a, &i) in nodes.iter().enumerate() {
            for &j in &nodes[a + 1..] {
                if !current.contains(i, j) {
                    pairs.push((i, j));
                }
            }
        }
        let keep = recovery_quota(mu, pairs.len());
        if keep == 0 {
            continue;
        }
        let sims = node_similarity(r_layers, &pairs)?;
        let mut ranked: Vec<((usize, usize), f64)> = pairs.into_iter().zip(sims).collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        for &((i, j), _) in &ranked[..keep] {
            recovered.insert(i, j);
        }
    }
    Ok(recovered)
}

/// Existing edges whose endpoints are both confident with different
/// pseudo-labels.
pub fn remove_edges(confident: &ConfidentSet, edges: &EdgeSet) -> EdgeSet {
    let label: std::collections::HashMap<usize, usize> = confident.labels().into_iter().collect();
    edges
        .iter()
        .filter(|(u, v)| match (label.get(u), label.get(v)) {
            (Some(a), Some(b)) => a != b,
            _ => false,
        })
        .collect()
}

/// `(edges \ removed) ∪ recovered`.
pub fn apply_refinement(
    edges: &EdgeSet,
    recovered: &EdgeSet,
    removed: &EdgeSet,
) -> Result<EdgeSet> {
    if !removed.is_subset(edges) {
        return Err(Error::invalid(
            "removed edges are not all present in the edge set",
        ));
    }
    if !recovered.is_disjoint(edges) {
        return Err(Error::invalid("recovered edges overlap the edge set"));
    }
    Ok(edges.difference(removed).union(recovered))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementResult {
    pub recovered: EdgeSet,
    pub removed: EdgeSet,
    pub refined: EdgeSet,
    pub mu: f64,
}

/// One refinement round on the current edge set.
pub fn refine(
    confident: &ConfidentSet,
    r_layers: &[RepresentativenessMatrix],
    mu: f64,
    edges: &EdgeSet,
) -> Result<RefinementResult> {
    let recovered = recover_edges(confident, r_layers, mu, edges)?;
    let removed = remove_edges(confident, edges);
    let refined = apply_refinement(edges, &recovered, &removed)?;
    Ok(RefinementResult {
        recovered,
        removed,
        refined,
        mu,
    })
}

/// A stochastically perturbed copy of a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedView {
    pub edges: EdgeSet,
    pub features: Array2<f64>,
}

/// Per-edge drop probabilities: proportional to the inverse mean endpoint
/// degree, scaled to average `rate` and clamped to `[0, MAX_DROP_PROB]`.
pub fn edge_drop_probabilities(edges: &EdgeSet, n: usize, rate: f64) -> Vec<f64> {
    let degree = edges.degrees(n);
    let weights: Vec<f64> = edges
        .iter()
        .map(|(u, v)| 2.0 / (degree[u] + degree[v]) as f64)
        .collect();
    if weights.is_empty() {
        return weights;
    }
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    weights
        .into_iter()
        .map(|w| (rate * w / mean).clamp(0.0, MAX_DROP_PROB))
        .collect()
}

/// Drops edges (favoring those between low-degree nodes) and zeroes feature
/// entries independently per node and dimension.
pub fn augment(
    features: &Array2<f64>,
    edges: &EdgeSet,
    edge_drop_rate: f64,
    feature_mask_rate: f64,
    seed: u64,
) -> Result<AugmentedView> {
    for (name, r) in [
        ("edge drop rate", edge_drop_rate),
        ("feature mask rate", feature_mask_rate),
    ] {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::invalid(format!(
                "{name} must lie in [0, 1), got {r}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probs = edge_drop_probabilities(edges, features.nrows(), edge_drop_rate);
    let kept: EdgeSet = edges
        .iter()
        .zip(probs)
        .filter(|&(_, p)| !rng.random_bool(p))
        .map(|(e, _)| e)
        .collect();
    let mut masked = features.clone();
    if feature_mask_rate > 0.0 {
        for x in masked.iter_mut() {
            if rng.random_bool(feature_mask_rate) {
                *x = 0.0;
            }
        }
    }
    Ok(AugmentedView {
        edges: kept,
        features: masked,
    })
}

/// `KL(p || p_bar)` of one row, floored at zero against round-off on rows
/// that sum to one only approximately.
fn row_kl(p: ArrayView1<f64>, q: ArrayView1<f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a.max(PROB_FLOOR).ln() - b.max(PROB_FLOOR).ln()))
        .sum::<f64>()
        .max(0.0)
}

/// `sum_i KL(p_i || p_bar_i)` for one layer, both sides floored at
/// [`PROB_FLOOR`] inside the logarithm.
pub(crate) fn consistency_loss_raw(p: &Array2<f64>, p_bar: &Array2<f64>) -> f64 {
    p.rows()
        .into_iter()
        .zip(p_bar.rows())
        .map(|(a, b)| row_kl(a, b))
        .sum()
}

/// Accumulates the partial derivatives of [`consistency_loss_raw`]. Rows
/// whose divergence is floored contribute nothing.
pub(crate) fn consistency_grads(
    p: &Array2<f64>,
    p_bar: &Array2<f64>,
    d_p: &mut Array2<f64>,
    d_p_bar: &mut Array2<f64>,
) {
    for i in 0..p.nrows() {
        let (a_row, b_row) = (p.row(i), p_bar.row(i));
        if row_kl(a_row, b_row) <= 0.0 {
            continue;
        }
        for g in 0..p.ncols() {
            let (a, b) = (a_row[g], b_row[g]);
            if a <= 0.0 {
                continue;
            }
            d_p[[i, g]] += a.max(PROB_FLOOR).ln() - b.max(PROB_FLOOR).ln();
            if a > PROB_FLOOR {
                d_p[[i, g]] += 1.0;
            }
            if b > PROB_FLOOR {
                d_p_bar[[i, g]] -= a / b;
            }
        }
    }
}

/// Sum over layers and nodes of `KL(p || p_bar)`.
pub fn consistency_loss(
    p_layers: &[GroupAssignment],
    p_bar_layers: &[GroupAssignment],
) -> Result<f64> {
    if p_layers.len() != p_bar_layers.len() {
        return Err(Error::Dimension(format!(
            "{} clean layers vs {} augmented layers",
            p_layers.len(),
            p_bar_layers.len()
        )));
    }
    let mut total = 0.0;
    for (l, (p, q)) in p_layers.iter().zip(p_bar_layers).enumerate() {
        if p.0.dim() != q.0.dim() {
            return Err(Error::Dimension(format!(
                "layer {l}: {:?} vs {:?}",
                p.0.dim(),
                q.0.dim()
            )));
        }
        total += consistency_loss_raw(&p.0, &q.0);
    }
    Ok(total)
}
