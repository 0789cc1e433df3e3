//! Prototypes, node-to-prototype representativeness, balance regularization
//! and the Jaccard prototype graph.

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    /// `count x dim`, one prototype per row.
    pub vectors: Array2<f64>,
    /// Association width: each node attaches to its `topk` best prototypes.
    pub topk: usize,
}

impl PrototypeSet {
    pub fn new(vectors: Array2<f64>, topk: usize) -> Result<Self> {
        let count = vectors.nrows();
        if count < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 prototypes, got {count}"
            )));
        }
        if topk == 0 || topk > count {
            return Err(Error::invalid(format!(
                "topk must lie in [1, {count}], got {topk}"
            )));
        }
        Ok(Self { vectors, topk })
    }

    pub fn count(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Samples `count` rows of `data` (without replacement when possible)
    /// plus Gaussian jitter with std 0.01. Falls back to unit-Gaussian
    /// vectors when `data` has fewer than two rows.
    pub fn sample_from<R: Rng + ?Sized>(
        data: &Array2<f64>,
        count: usize,
        topk: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let dim = data.ncols();
        let mut vectors = Array2::zeros((count, dim));
        if data.nrows() < 2 {
            vectors.mapv_inplace(|_: f64| StandardNormal.sample(rng));
            return Self::new(vectors, topk);
        }
        let rows: Vec<usize> = if data.nrows() >= count {
            sample(rng, data.nrows(), count).into_vec()
        } else {
            (0..count)
                .map(|_| rng.random_range(0..data.nrows()))
                .collect()
        };
        let jitter = Normal::new(0.0, 0.01).expect("valid std");
        for (p, &row) in rows.iter().enumerate() {
            for (x, &v) in vectors.row_mut(p).iter_mut().zip(data.row(row).iter()) {
                *x = v + jitter.sample(rng);
            }
        }
        Self::new(vectors, topk)
    }
}

/// Row-stochastic `N x N_pro` matrix of representativeness scores.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentativenessMatrix(pub Array2<f64>);

impl RepresentativenessMatrix {
    pub fn nodes(&self) -> usize {
        self.0.nrows()
    }

    pub fn prototypes(&self) -> usize {
        self.0.ncols()
    }
}

/// In-place row softmax with max subtraction.
pub(crate) fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

/// `r_ij = softmax_j(h_i . c_j)`.
pub fn representativeness(
    h: &Array2<f64>,
    prototypes: &Array2<f64>,
) -> Result<RepresentativenessMatrix> {
    if h.ncols() != prototypes.ncols() {
        return Err(Error::Dimension(format!(
            "representations have dim {}, prototypes dim {}",
            h.ncols(),
            prototypes.ncols()
        )));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("node representations"));
    }
    if prototypes.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("prototype vectors"));
    }
    let mut logits = h.dot(&prototypes.t());
    softmax_rows(&mut logits);
    Ok(RepresentativenessMatrix(logits))
}

/// Mean over nodes of `r_i`, clamped below at [`PROB_FLOOR`].
fn marginal(r: &Array2<f64>) -> Vec<f64> {
    let n = r.nrows().max(1) as f64;
    r.sum_axis(Axis(0))
        .iter()
        .map(|s| (s / n).max(PROB_FLOOR))
        .collect()
}

/// `KL(uniform || mean_i r_i)`.
pub fn balance_regularizer(r: &RepresentativenessMatrix) -> f64 {
    let m = marginal(&r.0);
    let u = 1.0 / m.len() as f64;
    let kl: f64 = m.iter().map(|&mj| u * (u / mj).ln()).sum();
    kl.max(0.0)
}

/// Gradient of [`balance_regularizer`] with respect to every entry of `r`.
pub fn balance_regularizer_grad(r: &RepresentativenessMatrix) -> Array2<f64> {
    let (n, p) = r.0.dim();
    let u = 1.0 / p as f64;
    let sums = r.0.sum_axis(Axis(0));
    let mut grad = Array2::zeros((n, p));
    for j in 0..p {
        let mean = sums[j] / n as f64;
        // The clamp is flat below the floor.
        let g = if mean > PROB_FLOOR {
            -u / (mean * n as f64)
        } else {
            0.0
        };
        grad.column_mut(j).fill(g);
    }
    grad
}

/// `Γ_j`: nodes that rank prototype `j` among their `k` highest scores.
/// Ties go to the lower prototype index. Node lists are ascending.
pub fn associate_topk(r: &RepresentativenessMatrix, k: usize) -> Result<Vec<Vec<usize>>> {
    let p = r.prototypes();
    if k == 0 || k > p {
        return Err(Error::invalid(format!(
            "topk must lie in [1, {p}], got {k}"
        )));
    }
    let mut sets = vec![Vec::new(); p];
    let mut order: Vec<usize> = (0..p).collect();
    for (i, row) in r.0.rows().into_iter().enumerate() {
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &j in &order[..k] {
            sets[j].push(i);
        }
    }
    Ok(sets)
}

/// Prototype relationship graph: association sets and Jaccard similarity.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeGraph {
    pub associations: Vec<Vec<usize>>,
    pub similarity: Array2<f64>,
}

impl PrototypeGraph {
    pub fn from_representativeness(r: &RepresentativenessMatrix, k: usize) -> Result<Self> {
        let associations = associate_topk(r, k)?;
        let similarity = prototype_similarity(&associations);
        Ok(Self {
            associations,
            similarity,
        })
    }

    pub fn len(&self) -> usize {
        self.associations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.associations.is_empty()
    }
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Pairwise Jaccard index of ascending node sets; 0 when both are empty.
pub fn prototype_similarity(sets: &[Vec<usize>]) -> Array2<f64> {
    let p = sets.len();
    let mut s = Array2::zeros((p, p));
    for a in 0..p {
        for b in a..p {
            let inter = intersection_size(&sets[a], &sets[b]);
            let union = sets[a].len() + sets[b].len() - inter;
            let v = if union == 0 {
                0.0
            } else {
                inter as f64 / union as f64
            };
            s[[a, b]] = v;
            s[[b, a]] = v;
        }
    }
    s
}
