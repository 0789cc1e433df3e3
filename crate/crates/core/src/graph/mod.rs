//! Attributed graphs: node features, an undirected edge set and partial labels.

mod io;
mod sbm;
mod split;

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_graph, save_graph, write_edges_csv, EDGES_FILE, FEATURES_FILE, LABELS_FILE};
pub use sbm::{generate_sbm, SbmSpec};
pub use split::{make_open_world_split, OpenWorldSplit};

/// Undirected, simple edge set. Pairs are stored canonically as `(min, max)`,
/// so membership is symmetric by construction and self-loops never enter.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSet {
    pairs: BTreeSet<(usize, usize)>,
}

#[inline]
fn canonical(u: usize, v: usize) -> (usize, usize) {
    if u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

impl EdgeSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `{u, v}`. Returns `false` for self-loops and duplicates.
    pub fn insert(&mut self, u: usize, v: usize) -> bool {
        if u == v {
            return false;
        }
        self.pairs.insert(canonical(u, v))
    }

    pub fn remove(&mut self, u: usize, v: usize) -> bool {
        self.pairs.remove(&canonical(u, v))
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        u != v && self.pairs.contains(&canonical(u, v))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Canonical pairs `(u, v)` with `u < v`, in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn is_subset(&self, other: &EdgeSet) -> bool {
        self.pairs.is_subset(&other.pairs)
    }

    pub fn is_disjoint(&self, other: &EdgeSet) -> bool {
        self.pairs.is_disjoint(&other.pairs)
    }

    pub fn difference(&self, other: &EdgeSet) -> EdgeSet {
        EdgeSet {
            pairs: self.pairs.difference(&other.pairs).copied().collect(),
        }
    }

    pub fn union(&self, other: &EdgeSet) -> EdgeSet {
        EdgeSet {
            pairs: self.pairs.union(&other.pairs).copied().collect(),
        }
    }

    /// Largest endpoint + 1, or 0 for an empty set.
    pub fn min_node_count(&self) -> usize {
        self.pairs.iter().map(|&(_, v)| v + 1).max().unwrap_or(0)
    }

    /// Sorted neighbor lists for `n` nodes.
    pub fn adjacency(&self, n: usize) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in &self.pairs {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self, n: usize) -> Vec<usize> {
        let mut deg = vec![0; n];
        for &(u, v) in &self.pairs {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }
}

impl FromIterator<(usize, usize)> for EdgeSet {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        let mut set = EdgeSet::new();
        for (u, v) in iter {
            set.insert(u, v);
        }
        set
    }
}

/// Node-attributed graph with optional ground-truth labels.
///
/// `label_mask[i]` marks labels that training may see. Nodes may carry a
/// label while masked out (benchmark mode keeps ground truth for scoring).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributedGraph {
    pub features: Array2<f64>,
    pub edges: EdgeSet,
    pub labels: Vec<Option<usize>>,
    pub label_mask: Vec<bool>,
}

impl AttributedGraph {
    /// Builds a graph, checking edge bounds and label length. All labels start
    /// hidden from training.
    pub fn new(features: Array2<f64>, edges: EdgeSet, labels: Vec<Option<usize>>) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(Error::Dimension(format!(
                "{} labels for {} nodes",
                labels.len(),
                n
            )));
        }
        if let Some((_, v)) = edges.iter().find(|&(_, v)| v >= n) {
            return Err(Error::NodeOutOfRange {
                index: v,
                node_count: n,
            });
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("node features"));
        }
        Ok(Self {
            features,
            edges,
            label_mask: vec![false; n],
            labels,
        })
    }

    pub fn node_count(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Neighbors of `v`, excluding `v` itself, ascending.
    pub fn neighborhood(&self, v: usize) -> Result<BTreeSet<usize>> {
        let n = self.node_count();
        if v >= n {
            return Err(Error::NodeOutOfRange {
                index: v,
                node_count: n,
            });
        }
        Ok(self
            .edges
            .iter()
            .filter_map(|(a, b)| {
                if a == v {
                    Some(b)
                } else if b == v {
                    Some(a)
                } else {
                    None
                }
            })
            .collect())
    }

    /// Distinct class ids present in `labels`, ascending.
    pub fn classes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.labels.iter().flatten().copied().collect();
        set.into_iter().collect()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }
}
