//! Stacked prototypical attention network.
//!
//! Each layer scores its input representations against its own prototypes,
//! clusters the prototype graph, turns the partition into node-to-group
//! probabilities and aggregates neighbors with attention weights derived
//! from the similarity of those probabilities.
//!
//! The discrete parts of a layer (top-k sets, the partition, the class
//! matching) are recomputed on every forward pass but treated as constants
//! for differentiation. Gradients flow through the softmax scores, the group
//! sums, the cosine attention and the aggregation.

mod checkpoint;
mod gradcheck;
mod loss;
mod optim;
mod train;

use std::ops::RangeInclusive;

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{
    match_and_score, node_group_assignment, search_granularity, ClassMatching, GroupAssignment,
    GroupPartition, SpectralDecomposition,
};
use crate::error::{Error, Result};
use crate::graph::EdgeSet;
use crate::prototype::{
    representativeness, PrototypeGraph, PrototypeSet, RepresentativenessMatrix,
};

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckReport, GradProbe, ParamKind};
pub use loss::{
    ce_loss, ce_targets, objective, total_loss, LossBreakdown, Objective, ParamGrads, View,
};
pub use optim::Adam;
pub use train::{
    fit, FitConfig, FitOutput, GranularityMode, RefinementLog, SupervisionMode, TrainState,
};

/// Supervision label: a known class id or a discovered pseudo-class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Target {
    Class(usize),
    Pseudo(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionMode {
    /// Softmax over cosine similarity of group-assignment rows.
    GroupAware,
    /// Mean over the closed neighborhood (ablation baseline).
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanLayer {
    /// `d_in x d_out`.
    pub weight: Array2<f64>,
    pub prototypes: PrototypeSet,
}

impl PanLayer {
    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanStack {
    pub layers: Vec<PanLayer>,
}

impl PanStack {
    pub fn new(layers: Vec<PanLayer>) -> Result<Self> {
        for (l, layer) in layers.iter().enumerate() {
            if layer.prototypes.dim() != layer.input_dim() {
                return Err(Error::Dimension(format!(
                    "layer {l}: prototype dim {} vs input dim {}",
                    layer.prototypes.dim(),
                    layer.input_dim()
                )));
            }
            if l > 0 && layers[l - 1].output_dim() != layer.input_dim() {
                return Err(Error::Dimension(format!(
                    "layer {l} input dim {} does not chain from output dim {}",
                    layer.input_dim(),
                    layers[l - 1].output_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Glorot-uniform weights; each layer's prototypes are sampled from the
    /// representations that layer sees under the initial weights on `edges`.
    pub fn init<R: Rng + ?Sized>(
        features: &Array2<f64>,
        edges: &EdgeSet,
        depth: usize,
        hidden: usize,
        n_pro: usize,
        topk: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("network needs at least one layer"));
        }
        let adjacency = edges.adjacency(features.nrows());
        let mut layers = Vec::with_capacity(depth);
        let mut h = features.clone();
        for _ in 0..depth {
            let d_in = h.ncols();
            let limit = (6.0 / (d_in + hidden) as f64).sqrt();
            let weight = Array2::from_shape_fn((d_in, hidden), |_| rng.random_range(-limit..limit));
            let prototypes = PrototypeSet::sample_from(&h, n_pro, topk, rng)?;
            let n = h.nrows();
            let uniform = GroupAssignment(Array2::from_elem((n, 1), 1.0));
            let alpha = AttentionWeights::compute(&uniform.0, &adjacency, AttentionMode::Uniform);
            let pre = alpha.aggregate(&h.dot(&weight));
            h = pre.mapv(relu);
            layers.push(PanLayer { weight, prototypes });
        }
        Self::new(layers)
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Attention weights over closed neighborhoods `{i} ∪ N(i)`.
/// `neighbors[i][0] == i`; `weights[i]` sums to one.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub neighbors: Vec<Vec<usize>>,
    pub weights: Vec<Vec<f64>>,
}

fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

impl AttentionWeights {
    pub fn compute(p: &Array2<f64>, adjacency: &[Vec<usize>], mode: AttentionMode) -> Self {
        let mut neighbors = Vec::with_capacity(adjacency.len());
        let mut weights = Vec::with_capacity(adjacency.len());
        for (i, adj) in adjacency.iter().enumerate() {
            let mut nb = Vec::with_capacity(adj.len() + 1);
            nb.push(i);
            nb.extend(adj.iter().copied().filter(|&k| k != i));
            let w = match mode {
                AttentionMode::Uniform => vec![1.0 / nb.len() as f64; nb.len()],
                AttentionMode::GroupAware => {
                    let e: Vec<f64> = nb.iter().map(|&k| cosine(p.row(i), p.row(k))).collect();
                    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let exp: Vec<f64> = e.iter().map(|x| (x - max).exp()).collect();
                    let sum: f64 = exp.iter().sum();
                    exp.into_iter().map(|x| x / sum).collect()
                }
            };
            neighbors.push(nb);
            weights.push(w);
        }
        Self { neighbors, weights }
    }

    /// `out_i = sum_j alpha_ij y_j`.
    pub fn aggregate(&self, y: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(y.dim());
        for (i, (nb, w)) in self.neighbors.iter().zip(&self.weights).enumerate() {
            let mut row = out.row_mut(i);
            for (&k, &a) in nb.iter().zip(w) {
                row.scaled_add(a, &y.row(k));
            }
        }
        out
    }

    pub fn weight(&self, i: usize, k: usize) -> Option<f64> {
        self.neighbors[i]
            .iter()
            .position(|&j| j == k)
            .map(|pos| self.weights[i][pos])
    }
}

/// Group-aware attention weights: `alpha_ik = softmax_k cos(p_i, p_k)` over
/// the closed neighborhood of `i`.
pub fn attention_scores(p: &GroupAssignment, edges: &EdgeSet) -> AttentionWeights {
    let adjacency = edges.adjacency(p.0.nrows());
    AttentionWeights::compute(&p.0, &adjacency, AttentionMode::GroupAware)
}

/// Differentiable intermediates of one layer under a fixed partition.
#[derive(Clone, Debug)]
pub struct LayerCache {
    pub h_in: Array2<f64>,
    pub r: Array2<f64>,
    pub p: Array2<f64>,
    pub membership: Array2<f64>,
    pub attention: AttentionWeights,
    pub y: Array2<f64>,
    pub pre_activation: Array2<f64>,
    pub h_out: Array2<f64>,
    pub mode: AttentionMode,
}

/// Forward pass of one layer with the partition held fixed.
pub fn layer_forward_fixed(
    layer: &PanLayer,
    h_in: &Array2<f64>,
    adjacency: &[Vec<usize>],
    partition: &GroupPartition,
    mode: AttentionMode,
) -> Result<LayerCache> {
    let r = representativeness(h_in, &layer.prototypes.vectors)?;
    let membership = partition.membership();
    let p = r.0.dot(&membership);
    let attention = AttentionWeights::compute(&p, adjacency, mode);
    let y = h_in.dot(&layer.weight);
    let pre_activation = attention.aggregate(&y);
    let h_out = pre_activation.mapv(relu);
    Ok(LayerCache {
        h_in: h_in.clone(),
        r: r.0,
        p,
        membership,
        attention,
        y,
        pre_activation,
        h_out,
        mode,
    })
}

/// Gradients of one layer's parameters plus the upstream gradient.
pub struct LayerGrads {
    pub h_in: Array2<f64>,
    pub weight: Array2<f64>,
    pub prototypes: Array2<f64>,
}

/// Reverse pass of [`layer_forward_fixed`]. `d_p` and `d_r` are loss
/// gradients that enter at the group assignment and the representativeness
/// scores; `d_h_out` arrives from the next layer.
pub fn layer_backward(
    layer: &PanLayer,
    cache: &LayerCache,
    d_h_out: &Array2<f64>,
    d_p: &Array2<f64>,
    d_r: Option<&Array2<f64>>,
) -> LayerGrads {
    let n = cache.h_in.nrows();
    let d_pre = ndarray::Zip::from(d_h_out)
        .and(&cache.pre_activation)
        .map_collect(|&g, &a| if a > 0.0 { g } else { 0.0 });

    let mut d_y = Array2::<f64>::zeros(cache.y.dim());
    let mut d_p = d_p.clone();
    let att = &cache.attention;
    for i in 0..n {
        let nb = &att.neighbors[i];
        let w = &att.weights[i];
        let g_i = d_pre.row(i);
        let mut d_alpha = Vec::with_capacity(nb.len());
        for (&k, &a) in nb.iter().zip(w) {
            d_y.row_mut(k).scaled_add(a, &g_i);
            d_alpha.push(g_i.dot(&cache.y.row(k)));
        }
        if cache.mode == AttentionMode::Uniform {
            continue;
        }
        let mean: f64 = w.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
        let p_i = cache.p.row(i).to_owned();
        let norm_i = p_i.dot(&p_i).sqrt();
        for ((&k, &a), &da) in nb.iter().zip(w).zip(&d_alpha) {
            // the self term is cos(p_i, p_i) = 1, constant
            if k == i {
                continue;
            }
            let d_e = a * (da - mean);
            if d_e == 0.0 {
                continue;
            }
            let p_k = cache.p.row(k).to_owned();
            let norm_k = p_k.dot(&p_k).sqrt();
            if norm_i == 0.0 || norm_k == 0.0 {
                continue;
            }
            let dot = p_i.dot(&p_k);
            let c = dot / (norm_i * norm_k);
            let scale = d_e / (norm_i * norm_k);
            let ci = d_e * c / (norm_i * norm_i);
            let ck = d_e * c / (norm_k * norm_k);
            for g in 0..p_i.len() {
                d_p[[i, g]] += scale * p_k[g] - ci * p_i[g];
                d_p[[k, g]] += scale * p_i[g] - ck * p_k[g];
            }
        }
    }

    let d_weight = cache.h_in.t().dot(&d_y);
    let mut d_h_in = d_y.dot(&layer.weight.t());

    let mut d_r_total = d_p.dot(&cache.membership.t());
    if let Some(extra) = d_r {
        d_r_total += extra;
    }
    let inner = (&d_r_total * &cache.r).sum_axis(Axis(1));
    let mut d_logits = d_r_total;
    for (i, mut row) in d_logits.rows_mut().into_iter().enumerate() {
        let s = inner[i];
        for (g, &ri) in row.iter_mut().zip(cache.r.row(i).iter()) {
            *g = ri * (*g - s);
        }
    }
    let d_prototypes = d_logits.t().dot(&cache.h_in);
    d_h_in += &d_logits.dot(&layer.prototypes.vectors);

    LayerGrads {
        h_in: d_h_in,
        weight: d_weight,
        prototypes: d_prototypes,
    }
}

/// How a layer chooses its cluster count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Granularity {
    /// Evaluate every count in the range and keep the most accurate.
    Search(RangeInclusive<usize>),
    /// Cluster at exactly this count ("with prior" mode, or reuse).
    Fixed(usize),
}

/// Everything one layer produces on a forward pass.
#[derive(Clone, Debug)]
pub struct LayerOutput {
    pub cache: LayerCache,
    pub prototype_graph: PrototypeGraph,
    pub partition: GroupPartition,
    pub matching: ClassMatching<Target>,
    pub scores: Vec<(usize, f64)>,
}

impl LayerOutput {
    pub fn n_groups(&self) -> usize {
        self.partition.n_groups()
    }

    pub fn assignment(&self) -> GroupAssignment {
        GroupAssignment(self.cache.p.clone())
    }

    pub fn representativeness(&self) -> RepresentativenessMatrix {
        RepresentativenessMatrix(self.cache.r.clone())
    }
}

/// Full layer step: representativeness, prototype graph, partition
/// (searched or fixed), group assignment, class matching on `labels`, then
/// attention and aggregation.
pub fn layer_forward(
    layer: &PanLayer,
    h_in: &Array2<f64>,
    adjacency: &[Vec<usize>],
    granularity: &Granularity,
    labels: &[(usize, Target)],
    mode: AttentionMode,
    seed: u64,
) -> Result<LayerOutput> {
    let r = representativeness(h_in, &layer.prototypes.vectors)?;
    let pg = PrototypeGraph::from_representativeness(&r, layer.prototypes.topk)?;
    let (partition, matching, scores) = match granularity {
        Granularity::Search(range) => {
            let choice = search_granularity(&pg, &r, labels, range.clone(), None, seed)?;
            (choice.partition, choice.matching, choice.scores)
        }
        Granularity::Fixed(n) => {
            let partition = SpectralDecomposition::new(&pg.similarity)?.partition(*n, seed)?;
            let matching = match_and_score(&node_group_assignment(&r, &partition), labels)?;
            let acc = matching.accuracy;
            (partition, matching, vec![(*n, acc)])
        }
    };
    let cache = layer_forward_fixed(layer, h_in, adjacency, &partition, mode)?;
    Ok(LayerOutput {
        cache,
        prototype_graph: pg,
        partition,
        matching,
        scores,
    })
}

/// Runs every layer in order starting from `features`. Layer `l` uses
/// `granularities[l]` and a seed derived from `seed` and `l`.
pub fn stack_forward(
    stack: &PanStack,
    features: &Array2<f64>,
    edges: &EdgeSet,
    granularities: &[Granularity],
    labels: &[(usize, Target)],
    mode: AttentionMode,
    seed: u64,
) -> Result<Vec<LayerOutput>> {
    if granularities.len() != stack.depth() {
        return Err(Error::Dimension(format!(
            "{} granularities for {} layers",
            granularities.len(),
            stack.depth()
        )));
    }
    let adjacency = edges.adjacency(features.nrows());
    let mut outputs: Vec<LayerOutput> = Vec::with_capacity(stack.depth());
    for (l, layer) in stack.layers.iter().enumerate() {
        let h_in = match outputs.last() {
            Some(prev) => &prev.cache.h_out,
            None => features,
        };
        let out = layer_forward(
            layer,
            h_in,
            &adjacency,
            &granularities[l],
            labels,
            mode,
            crate::seed::derive(seed, &[l as u64]),
        )?;
        outputs.push(out);
    }
    Ok(outputs)
}

/// Forward pass of the whole stack with every partition held fixed.
pub fn stack_forward_fixed(
    stack: &PanStack,
    features: &Array2<f64>,
    adjacency: &[Vec<usize>],
    partitions: &[GroupPartition],
    mode: AttentionMode,
) -> Result<Vec<LayerCache>> {
    let mut caches: Vec<LayerCache> = Vec::with_capacity(stack.depth());
    for (layer, partition) in stack.layers.iter().zip(partitions) {
        let h_in = match caches.last() {
            Some(prev) => &prev.h_out,
            None => features,
        };
        let cache = layer_forward_fixed(layer, h_in, adjacency, partition, mode)?;
        caches.push(cache);
    }
    Ok(caches)
}
