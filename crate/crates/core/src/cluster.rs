//! Semi-supervised clustering of the prototype graph: spectral partitioning,
//! node-to-group assignment, Hungarian class matching and granularity search.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assignment::max_weight_matching;
use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::prototype::{PrototypeGraph, RepresentativenessMatrix};

const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 100;
const SYMMETRY_TOL: f64 = 1e-12;

/// Partition of prototype indices into nonempty disjoint groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupPartition {
    groups: Vec<Vec<usize>>,
    group_of: Vec<usize>,
}

impl GroupPartition {
    /// Builds a partition from per-prototype group labels in `0..n_groups`.
    pub fn from_labels(labels: &[usize], n_groups: usize) -> Result<Self> {
        let mut groups = vec![Vec::new(); n_groups];
        for (p, &g) in labels.iter().enumerate() {
            if g >= n_groups {
                return Err(Error::invalid(format!("group {g} >= {n_groups}")));
            }
            groups[g].push(p);
        }
        if groups.iter().any(Vec::is_empty) {
            return Err(Error::invalid("partition has an empty group"));
        }
        Ok(Self {
            groups,
            group_of: labels.to_vec(),
        })
    }

    /// Every prototype in its own group, in index order.
    pub fn singletons(n: usize) -> Self {
        Self {
            groups: (0..n).map(|p| vec![p]).collect(),
            group_of: (0..n).collect(),
        }
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_prototypes(&self) -> usize {
        self.group_of.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_of(&self, prototype: usize) -> usize {
        self.group_of[prototype]
    }

    /// `N_pro x N_clu` 0/1 membership matrix.
    pub fn membership(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n_prototypes(), self.n_groups()));
        for (p, &g) in self.group_of.iter().enumerate() {
            m[[p, g]] = 1.0;
        }
        m
    }
}

/// Eigen-decomposition of the symmetric-normalized Laplacian of a
/// prototype similarity matrix. Shared across cluster counts in a search.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `j` pairs with `eigenvalues[j]`.
    eigenvectors: Array2<f64>,
}

impl SpectralDecomposition {
    /// The diagonal of `similarity` is ignored; prototypes with no
    /// off-diagonal weight get a zero row in the normalized affinity.
    pub fn new(similarity: &Array2<f64>) -> Result<Self> {
        let (p, q) = similarity.dim();
        if p != q {
            return Err(Error::Dimension(format!("similarity is {p}x{q}")));
        }
        for a in 0..p {
            for b in a + 1..p {
                if (similarity[[a, b]] - similarity[[b, a]]).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid(format!(
                        "similarity not symmetric at ({a}, {b})"
                    )));
                }
            }
        }
        let degree: Vec<f64> = (0..p)
            .map(|a| (0..p).filter(|&b| b != a).map(|b| similarity[[a, b]]).sum())
            .collect();
        let inv_sqrt: Vec<f64> = degree
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();
        let laplacian = DMatrix::from_fn(p, p, |a, b| {
            let identity = if a == b { 1.0 } else { 0.0 };
            let w = if a == b { 0.0 } else { similarity[[a, b]] };
            identity - inv_sqrt[a] * w * inv_sqrt[b]
        });
        let eig = SymmetricEigen::new(laplacian);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[a]
                .total_cmp(&eig.eigenvalues[b])
                .then(a.cmp(&b))
        });
        let eigenvalues = order.iter().map(|&j| eig.eigenvalues[j]).collect();
        let eigenvectors =
            Array2::from_shape_fn((p, p), |(row, col)| eig.eigenvectors[(row, order[col])]);
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `λ_{n+1} - λ_n` in 1-based ascending order; 0 when `n` is the full size.
    pub fn eigengap(&self, n: usize) -> f64 {
        if n == 0 || n >= self.len() {
            0.0
        } else {
            self.eigenvalues[n] - self.eigenvalues[n - 1]
        }
    }

    /// Row-normalized embedding on the bottom `n` eigenvectors, clustered by
    /// k-means with restarts seeded from `seed`.
    pub fn partition(&self, n: usize, seed: u64) -> Result<GroupPartition> {
        let p = self.len();
        if n == 0 || n > p {
            return Err(Error::invalid(format!(
                "cluster count {n} outside [1, {p}]"
            )));
        }
        if n == p {
            return Ok(GroupPartition::singletons(p));
        }
        let mut embedding = self.eigenvectors.slice(ndarray::s![.., ..n]).to_owned();
        for mut row in embedding.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 1e-12 {
                row.mapv_inplace(|x| x / norm);
            }
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let result = kmeans(&embedding, n, KMEANS_RESTARTS, KMEANS_MAX_ITER, &mut rng);
        GroupPartition::from_labels(&result.assignments, n)
    }
}

/// Normalized spectral clustering of the prototype graph into `n_clusters`
/// groups.
pub fn cluster_prototypes(
    pg: &PrototypeGraph,
    n_clusters: usize,
    seed: u64,
) -> Result<GroupPartition> {
    let p = pg.len();
    if n_clusters < 2 || n_clusters > p {
        return Err(Error::invalid(format!(
            "n_clusters must lie in [2, {p}], got {n_clusters}"
        )));
    }
    SpectralDecomposition::new(&pg.similarity)?.partition(n_clusters, seed)
}

/// Row-stochastic node-to-group probabilities, `N x N_clu`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupAssignment(pub Array2<f64>);

impl GroupAssignment {
    pub fn n_groups(&self) -> usize {
        self.0.ncols()
    }

    /// Argmax per row; ties go to the lower group index.
    pub fn hard_predictions(&self) -> Vec<usize> {
        hard_predictions(&self.0)
    }
}

pub(crate) fn hard_predictions(p: &Array2<f64>) -> Vec<usize> {
    p.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// `p_ik = sum_{j in group k} r_ij`.
pub fn node_group_assignment(
    r: &RepresentativenessMatrix,
    part: &GroupPartition,
) -> GroupAssignment {
    assert_eq!(
        r.prototypes(),
        part.n_prototypes(),
        "prototype count mismatch"
    );
    let mut p = Array2::zeros((r.nodes(), part.n_groups()));
    for (i, row) in r.0.rows().into_iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            p[[i, part.group_of(j)]] += x;
        }
    }
    GroupAssignment(p)
}

/// Result of matching predicted groups to classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMatching<L> {
    pub group_to_class: BTreeMap<usize, L>,
    pub accuracy: f64,
    pub novel_group_ids: Vec<usize>,
}

impl<L: Ord + Copy> ClassMatching<L> {
    pub fn group_for(&self, class: L) -> Option<usize> {
        self.group_to_class
            .iter()
            .find(|(_, &c)| c == class)
            .map(|(&g, _)| g)
    }

    pub fn class_to_group(&self) -> BTreeMap<L, usize> {
        self.group_to_class.iter().map(|(&g, &c)| (c, g)).collect()
    }
}

/// Maximum-agreement injective matching between predicted groups and
/// classes. Returns the matched pairs with positive agreement, the number
/// of correctly matched items, and the dense class list used.
pub(crate) fn best_matching<L: Ord + Copy>(
    predictions: &[usize],
    truth: &[L],
    n_groups: usize,
) -> (BTreeMap<usize, L>, usize) {
    let classes: Vec<L> = {
        let mut c = truth.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    let mut agreement = Array2::<f64>::zeros((n_groups, classes.len()));
    for (&g, t) in predictions.iter().zip(truth) {
        let c = classes.binary_search(t).expect("class present");
        agreement[[g, c]] += 1.0;
    }
    let matching = max_weight_matching(&agreement);
    let mut mapping = BTreeMap::new();
    let mut correct = 0usize;
    for (g, c) in matching.into_iter().enumerate() {
        if let Some(c) = c {
            let w = agreement[[g, c]];
            if w > 0.0 {
                mapping.insert(g, classes[c]);
                correct += w as usize;
            }
        }
    }
    (mapping, correct)
}

/// Hungarian matching of hard group predictions to the labels of the
/// supervised nodes, scored by matched accuracy. Groups left unmatched are
/// reported as novel.
pub fn match_and_score<L: Ord + Copy>(
    p: &GroupAssignment,
    labels: &[(usize, L)],
) -> Result<ClassMatching<L>> {
    if labels.is_empty() {
        return Err(Error::Empty("labeled node set"));
    }
    let hard = p.hard_predictions();
    let predictions: Vec<usize> = labels.iter().map(|&(i, _)| hard[i]).collect();
    let truth: Vec<L> = labels.iter().map(|&(_, c)| c).collect();
    let (group_to_class, correct) = best_matching(&predictions, &truth, p.n_groups());
    let novel_group_ids = (0..p.n_groups())
        .filter(|g| !group_to_class.contains_key(g))
        .collect();
    Ok(ClassMatching {
        group_to_class,
        accuracy: correct as f64 / labels.len() as f64,
        novel_group_ids,
    })
}

/// Outcome of a granularity search.
#[derive(Clone, Debug)]
pub struct GranularityChoice<L> {
    pub n_groups: usize,
    pub partition: GroupPartition,
    pub assignment: GroupAssignment,
    pub matching: ClassMatching<L>,
    /// Labeled accuracy of every evaluated cluster count, ascending by count.
    pub scores: Vec<(usize, f64)>,
}

/// Picks the cluster count with the highest labeled accuracy. When
/// `fixed_n` is given only that count is clustered. Ties go to the count
/// with the larger spectral eigengap, then to the smaller count.
pub fn search_granularity<L: Ord + Copy>(
    pg: &PrototypeGraph,
    r: &RepresentativenessMatrix,
    labels: &[(usize, L)],
    range: RangeInclusive<usize>,
    fixed_n: Option<usize>,
    seed: u64,
) -> Result<GranularityChoice<L>> {
    let p = pg.len();
    let candidates: Vec<usize> = match fixed_n {
        Some(n) => {
            if !range.contains(&n) {
                return Err(Error::invalid(format!(
                    "fixed cluster count {n} outside search range {range:?}"
                )));
            }
            vec![n]
        }
        None => range.clone().collect(),
    };
    if candidates.is_empty() {
        return Err(Error::Empty("granularity search range"));
    }
    if let Some(&n) = candidates.iter().find(|&&n| n == 0 || n > p) {
        return Err(Error::invalid(format!(
            "cluster count {n} outside [1, {p}]"
        )));
    }

    let spectral = SpectralDecomposition::new(&pg.similarity)?;
    let mut best: Option<(GranularityChoice<L>, f64)> = None;
    let mut scores = Vec::with_capacity(candidates.len());
    for n in candidates {
        let partition = spectral.partition(n, seed)?;
        let assignment = node_group_assignment(r, &partition);
        let matching = match_and_score(&assignment, labels)?;
        let gap = spectral.eigengap(n);
        scores.push((n, matching.accuracy));
        let better = match &best {
            None => true,
            Some((b, b_gap)) => {
                matching.accuracy > b.matching.accuracy
                    || (matching.accuracy == b.matching.accuracy && gap > *b_gap)
            }
        };
        if better {
            best = Some((
                GranularityChoice {
                    n_groups: n,
                    partition,
                    assignment,
                    matching,
                    scores: Vec::new(),
                },
                gap,
            ));
        }
    }
    let (mut choice, _) = best.expect("nonempty candidates");
    choice.scores = scores;
    Ok(choice)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn graph_from_similarity(s: Array2<f64>) -> PrototypeGraph {
        PrototypeGraph {
            associations: vec![Vec::new(); s.nrows()],
            similarity: s,
        }
    }

    fn two_cliques() -> Array2<f64> {
        let mut s = Array2::zeros((6, 6));
        for block in [[0, 2, 4], [1, 3, 5]] {
            for &a in &block {
                for &b in &block {
                    s[[a, b]] = if a == b { 1.0 } else { 0.6 };
                }
            }
        }
        s
    }

    #[test]
    fn planted_blocks_recovered() {
        let pg = graph_from_similarity(two_cliques());
        let part = cluster_prototypes(&pg, 2, 7).unwrap();
        let g = |p| part.group_of(p);
        assert_eq!(g(0), g(2));
        assert_eq!(g(2), g(4));
        assert_eq!(g(1), g(3));
        assert_eq!(g(3), g(5));
        assert_ne!(g(0), g(1));
    }

    #[test]
    fn full_count_gives_singletons() {
        let pg = graph_from_similarity(two_cliques());
        let part = cluster_prototypes(&pg, 6, 0).unwrap();
        assert!(part.groups().iter().all(|g| g.len() == 1));
    }

    #[test]
    fn identity_similarity_is_tolerated() {
        let pg = graph_from_similarity(Array2::eye(5));
        let part = cluster_prototypes(&pg, 2, 3).unwrap();
        assert_eq!(part.n_groups(), 2);
    }

    #[test]
    fn cluster_errors() {
        let pg = graph_from_similarity(two_cliques());
        assert!(cluster_prototypes(&pg, 1, 0).is_err());
        assert!(cluster_prototypes(&pg, 7, 0).is_err());
        let mut s = two_cliques();
        s[[0, 1]] = 0.3;
        assert!(cluster_prototypes(&graph_from_similarity(s), 2, 0).is_err());
    }

    #[test]
    fn group_assignment_examples() {
        let r = RepresentativenessMatrix(array![[0.5, 0.3, 0.2]]);
        let part = GroupPartition::from_labels(&[0, 1, 0], 2).unwrap();
        let p = node_group_assignment(&r, &part);
        assert_abs_diff_eq!(p.0[[0, 0]], 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(p.0[[0, 1]], 0.3, epsilon = 1e-15);

        let one = GroupPartition::from_labels(&[0, 0, 0], 1).unwrap();
        assert_abs_diff_eq!(
            node_group_assignment(&r, &one).0[[0, 0]],
            1.0,
            epsilon = 1e-15
        );

        let singles = GroupPartition::singletons(3);
        assert_eq!(node_group_assignment(&r, &singles).0, r.0);
    }

    fn one_hot(groups: &[usize], n: usize) -> GroupAssignment {
        let mut p = Array2::zeros((groups.len(), n));
        for (i, &g) in groups.iter().enumerate() {
            p[[i, g]] = 1.0;
        }
        GroupAssignment(p)
    }

    #[test]
    fn match_three_groups_two_classes() {
        // agreement [[5,0],[0,4],[1,1]]
        let mut groups = vec![0; 5];
        groups.extend(vec![1; 4]);
        groups.extend(vec![2; 2]);
        let mut classes = vec![0; 5];
        classes.extend(vec![1; 4]);
        classes.extend(vec![0, 1]);
        let labels: Vec<(usize, usize)> = classes.into_iter().enumerate().collect();
        let m = match_and_score(&one_hot(&groups, 3), &labels).unwrap();
        assert_eq!(m.group_to_class, [(0, 0), (1, 1)].into_iter().collect());
        assert_abs_diff_eq!(m.accuracy, 9.0 / 11.0, epsilon = 1e-15);
        assert_eq!(m.novel_group_ids, vec![2]);
    }

    #[test]
    fn permuted_predictions_score_one() {
        let groups = [2, 2, 0, 1, 1, 0];
        let labels: Vec<(usize, usize)> = [7, 7, 3, 5, 5, 3].into_iter().enumerate().collect();
        let m = match_and_score(&one_hot(&groups, 3), &labels).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!(m.novel_group_ids.is_empty());
    }

    #[test]
    fn single_group_single_class() {
        let labels: Vec<(usize, usize)> = (0..4).map(|i| (i, 9)).collect();
        let m = match_and_score(&one_hot(&[0, 0, 0, 0], 1), &labels).unwrap();
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn empty_labels_rejected() {
        let labels: Vec<(usize, usize)> = Vec::new();
        assert!(match_and_score(&one_hot(&[0], 1), &labels).is_err());
    }

    /// Six prototypes in two cliques; nodes 0..4 attach to the first block,
    /// 4..8 to the second.
    fn toy_search_inputs() -> (
        PrototypeGraph,
        RepresentativenessMatrix,
        Vec<(usize, usize)>,
    ) {
        let pg = graph_from_similarity(two_cliques());
        let mut r = Array2::from_elem((8, 6), 0.01);
        for i in 0..8 {
            let block = if i < 4 { [0, 2, 4] } else { [1, 3, 5] };
            for &p in &block {
                r[[i, p]] = 0.32;
            }
        }
        let labels = vec![(0, 0), (1, 0), (4, 1), (5, 1)];
        (pg, RepresentativenessMatrix(r), labels)
    }

    #[test]
    fn fixed_granularity_is_respected() {
        let (pg, r, labels) = toy_search_inputs();
        let c = search_granularity(&pg, &r, &labels, 2..=6, Some(2), 1).unwrap();
        assert_eq!(c.n_groups, 2);
        assert_eq!(c.matching.accuracy, 1.0);
    }

    #[test]
    fn singleton_range_equals_fixed() {
        let (pg, r, labels) = toy_search_inputs();
        let a = search_granularity(&pg, &r, &labels, 3..=3, None, 5).unwrap();
        let b = search_granularity(&pg, &r, &labels, 2..=6, Some(3), 5).unwrap();
        assert_eq!(a.partition, b.partition);
        assert_eq!(a.matching, b.matching);
    }

    #[test]
    fn search_prefers_planted_count() {
        let (pg, r, labels) = toy_search_inputs();
        let c = search_granularity(&pg, &r, &labels, 2..=6, None, 0).unwrap();
        assert_eq!(c.n_groups, 2);
        let best = c.scores.iter().map(|s| s.1).fold(0.0, f64::max);
        assert_eq!(c.matching.accuracy, best);
    }

    #[test]
    #[allow(clippy::reversed_empty_ranges)]
    fn empty_range_rejected() {
        let (pg, r, labels) = toy_search_inputs();
        assert!(matches!(
            search_granularity(&pg, &r, &labels, 4..=3, None, 0),
            Err(Error::Empty(_))
        ));
    }
}
