//! Multi-layer ensemble pseudo-labels: pad, align, average, suppress and pick
//! the most confident unlabeled nodes per group.

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::assignment::max_weight_matching;
use crate::cluster::hard_predictions;
use crate::error::{Error, Result};

/// Right-pads every prediction matrix with zero columns to the widest one.
pub fn pad_predictions(preds: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
    let Some(first) = preds.first() else {
        return Ok(Vec::new());
    };
    let n = first.nrows();
    if let Some(bad) = preds.iter().find(|p| p.nrows() != n) {
        return Err(Error::Dimension(format!(
            "prediction layers disagree on node count ({} vs {n})",
            bad.nrows()
        )));
    }
    let width = preds.iter().map(|p| p.ncols()).max().unwrap_or(0);
    Ok(preds
        .iter()
        .map(|p| {
            let mut out = Array2::zeros((n, width));
            out.slice_mut(s![.., ..p.ncols()]).assign(p);
            out
        })
        .collect())
}

/// `agreement[a, b]`: nodes whose argmax is `a` in `left` and `b` in `right`.
fn argmax_agreement(left: &Array2<f64>, right: &Array2<f64>) -> Array2<f64> {
    let width = left.ncols();
    let mut agreement = Array2::zeros((width, width));
    for (a, b) in hard_predictions(left)
        .into_iter()
        .zip(hard_predictions(right))
    {
        agreement[[a, b]] += 1.0;
    }
    agreement
}

/// Aligned layers and, per layer, the column placed at each reference position.
pub type AlignedLayers = (Vec<Array2<f64>>, Vec<Vec<usize>>);

/// Aligns every layer to the first one. For each later layer the columns are
/// permuted by the assignment that maximizes argmax agreement with the
/// reference layer. `maps[l][j]` is the layer-`l` column placed at
/// reference position `j`.
pub fn align_layers(padded: &[Array2<f64>]) -> Result<AlignedLayers> {
    let Some(reference) = padded.first() else {
        return Ok((Vec::new(), Vec::new()));
    };
    let width = reference.ncols();
    if padded.iter().any(|p| p.dim() != reference.dim()) {
        return Err(Error::Dimension("padded layers differ in shape".into()));
    }
    let mut aligned = vec![reference.clone()];
    let mut maps = vec![(0..width).collect::<Vec<_>>()];
    for layer in &padded[1..] {
        let agreement = argmax_agreement(reference, layer);
        let map: Vec<usize> = max_weight_matching(&agreement)
            .into_iter()
            .map(|c| c.expect("square matching covers every row"))
            .collect();
        let mut out = Array2::zeros(layer.dim());
        for (j, &c) in map.iter().enumerate() {
            out.column_mut(j).assign(&layer.column(c));
        }
        aligned.push(out);
        maps.push(map);
    }
    Ok((aligned, maps))
}

/// Elementwise mean over layers.
pub fn ensemble(aligned: &[Array2<f64>]) -> Result<Array2<f64>> {
    let Some(first) = aligned.first() else {
        return Err(Error::Empty("prediction layers"));
    };
    let mut sum = Array2::zeros(first.dim());
    for layer in aligned {
        if layer.dim() != first.dim() {
            return Err(Error::Dimension("aligned layers differ in shape".into()));
        }
        sum += layer;
    }
    Ok(sum / aligned.len() as f64)
}

/// Zeroes groups whose mean probability over nodes is not above `eta`.
/// Rows are left unnormalized.
pub fn suppress(p_hat: &Array2<f64>, eta: f64) -> Result<(Array2<f64>, Vec<bool>)> {
    if eta.is_nan() || eta < 0.0 {
        return Err(Error::invalid(format!("eta must be >= 0, got {eta}")));
    }
    let n = p_hat.nrows().max(1) as f64;
    let mask: Vec<bool> = p_hat
        .sum_axis(Axis(0))
        .iter()
        .map(|s| s / n > eta)
        .collect();
    if !mask.iter().any(|&m| m) {
        return Err(Error::invalid(format!(
            "suppression threshold {eta} removes every group"
        )));
    }
    let mut masked = p_hat.clone();
    for (j, &keep) in mask.iter().enumerate() {
        if !keep {
            masked.column_mut(j).fill(0.0);
        }
    }
    Ok((masked, mask))
}

/// Aligned, averaged and masked multi-layer prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub p_hat: Array2<f64>,
    pub mask: Vec<bool>,
    pub alignment: Vec<Vec<usize>>,
}

impl EnsemblePrediction {
    /// Runs pad, align, ensemble and suppress in sequence.
    pub fn from_layers(preds: &[Array2<f64>], eta: f64) -> Result<Self> {
        let padded = pad_predictions(preds)?;
        let (aligned, alignment) = align_layers(&padded)?;
        let averaged = ensemble(&aligned)?;
        let (p_hat, mask) = suppress(&averaged, eta)?;
        Ok(Self {
            p_hat,
            mask,
            alignment,
        })
    }

    pub fn hard_predictions(&self) -> Vec<usize> {
        hard_predictions(&self.p_hat)
    }

    /// Number of groups that survive suppression.
    pub fn active_groups(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Top-`gamma` unlabeled nodes of every ensemble group, most confident first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidentSet {
    /// `groups[k]` holds `(node, p_hat[node, k])` pairs.
    pub groups: Vec<Vec<(usize, f64)>>,
    pub gamma: f64,
}

impl ConfidentSet {
    /// `(node, group)` for every confident node, ascending by node.
    pub fn labels(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .groups
            .iter()
            .enumerate()
            .flat_map(|(k, members)| members.iter().map(move |&(i, _)| (i, k)))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pseudo-label dump, one `node_id,group_id,confidence` row per node.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<(usize, usize, f64)> = self
            .groups
            .iter()
            .enumerate()
            .flat_map(|(k, m)| m.iter().map(move |&(i, c)| (i, k, c)))
            .collect();
        rows.sort_by_key(|r| r.0);
        rows.iter()
            .map(|(i, k, c)| format!("{i},{k},{c}\n"))
            .collect()
    }
}

/// Ceiling of `gamma * count`, tolerant of floating-point overshoot
/// (`0.3 * 10` must give 3, not 4).
pub(crate) fn confident_quota(gamma: f64, count: usize) -> usize {
    let x = gamma * count as f64;
    ((x - 1e-9).ceil().max(0.0) as usize).min(count)
}

/// For each group `k`, the top `ceil(gamma * |candidates_k|)` of the
/// unlabeled nodes whose argmax is `k`, ranked by `p_hat[i, k]` descending
/// with ties to the lower node id.
pub fn select_confident(
    masked: &Array2<f64>,
    unlabeled: &[usize],
    gamma: f64,
) -> Result<ConfidentSet> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(format!(
            "gamma must lie in (0, 1], got {gamma}"
        )));
    }
    let hard = hard_predictions(masked);
    let mut candidates: Vec<Vec<(usize, f64)>> = vec![Vec::new(); masked.ncols()];
    for &i in unlabeled {
        let k = hard[i];
        candidates[k].push((i, masked[[i, k]]));
    }
    let groups = candidates
        .into_iter()
        .map(|mut c| {
            c.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let keep = confident_quota(gamma, c.len());
            c.truncate(keep);
            c
        })
        .collect();
    Ok(ConfidentSet { groups, gamma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn padding() {
        let a = array![[0.2, 0.3, 0.5]];
        let b = array![[0.1, 0.1, 0.2, 0.3, 0.3]];
        let padded = pad_predictions(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(padded[0], array![[0.2, 0.3, 0.5, 0.0, 0.0]]);
        assert_eq!(padded[1], b);
        assert_abs_diff_eq!(padded[0].sum(), a.sum(), epsilon = 0.0);
        let same = pad_predictions(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(same[1], a);
        assert!(pad_predictions(&[a, Array2::zeros((2, 3))]).is_err());
    }

    #[test]
    fn alignment_recovers_permutation() {
        let base = array![
            [0.8, 0.1, 0.1],
            [0.1, 0.7, 0.2],
            [0.2, 0.2, 0.6],
            [0.6, 0.3, 0.1]
        ];
        let perm = [2, 0, 1];
        let mut shuffled = Array2::zeros(base.dim());
        for (j, &c) in perm.iter().enumerate() {
            shuffled.column_mut(c).assign(&base.column(j));
        }
        let (aligned, maps) = align_layers(&[base.clone(), shuffled]).unwrap();
        assert_eq!(maps[1], perm.to_vec());
        assert_eq!(aligned[1], base);
    }

    #[test]
    fn single_layer_alignment_is_identity() {
        let p = array![[0.4, 0.6]];
        let (aligned, maps) = align_layers(std::slice::from_ref(&p)).unwrap();
        assert_eq!(maps, vec![vec![0, 1]]);
        assert_eq!(aligned[0], p);
    }

    #[test]
    fn zero_padded_column_takes_leftover_slot() {
        let l1 = array![[0.9, 0.05, 0.05], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]];
        let l2 = array![[0.1, 0.9], [0.7, 0.3], [0.8, 0.2]];
        let padded = pad_predictions(&[l1, l2]).unwrap();
        let (_, maps) = align_layers(&padded).unwrap();
        assert_eq!(maps[1][0], 1);
        assert!(maps[1][1] == 0 || maps[1][2] == 0);
        assert_eq!(maps[1].iter().filter(|&&c| c == 2).count(), 1);
    }

    #[test]
    fn ensemble_examples() {
        let a = array![[1.0, 0.0]];
        let b = array![[0.0, 1.0]];
        assert_eq!(ensemble(&[a.clone(), b]).unwrap(), array![[0.5, 0.5]]);
        assert_eq!(ensemble(&[a.clone(), a.clone(), a.clone()]).unwrap(), a);
        assert!(ensemble(&[]).is_err());
    }

    #[test]
    fn suppression_examples() {
        // popularity [0.5, 0.45, 0.05]
        let p = array![
            [0.8, 0.2, 0.0],
            [0.6, 0.3, 0.1],
            [0.3, 0.6, 0.1],
            [0.3, 0.7, 0.0]
        ];
        let (masked, mask) = suppress(&p, 0.1).unwrap();
        assert_eq!(mask, vec![true, true, false]);
        assert!(masked.column(2).iter().all(|&x| x == 0.0));
        assert_eq!(masked.row(0).to_vec(), vec![0.8, 0.2, 0.0]);

        let (_, mask) = suppress(&p, 0.0).unwrap();
        assert_eq!(mask, vec![true, true, true]);

        let padded = array![[0.5, 0.5, 0.0], [0.2, 0.8, 0.0]];
        assert_eq!(suppress(&padded, 0.0).unwrap().1, vec![true, true, false]);

        assert!(suppress(&p, 0.9).is_err());
    }

    #[test]
    fn confident_selection() {
        // candidates for group 0: a=0 (0.9), b=1 (0.6), c=2 (0.5)
        let p = array![[0.9, 0.1], [0.6, 0.4], [0.5, 0.4], [0.2, 0.8]];
        let set = select_confident(&p, &[0, 1, 2, 3], 0.34).unwrap();
        assert_eq!(
            set.groups[0].iter().map(|x| x.0).collect::<Vec<_>>(),
            vec![0, 1]
        );
        assert_eq!(
            set.groups[1].iter().map(|x| x.0).collect::<Vec<_>>(),
            vec![3]
        );

        let all = select_confident(&p, &[0, 1, 2, 3], 1.0).unwrap();
        assert_eq!(all.len(), 4);

        let labeled_excluded = select_confident(&p, &[1, 2], 1.0).unwrap();
        assert_eq!(labeled_excluded.labels(), vec![(1, 0), (2, 0)]);
        assert!(labeled_excluded.groups[1].is_empty());

        assert!(select_confident(&p, &[0], 0.0).is_err());
        assert!(select_confident(&p, &[0], 1.5).is_err());
    }

    #[test]
    fn quota_uses_ceiling() {
        assert_eq!(confident_quota(0.34, 3), 2);
        assert_eq!(confident_quota(0.3, 10), 3);
        assert_eq!(confident_quota(0.3, 1), 1);
        assert_eq!(confident_quota(0.3, 0), 0);
    }
}
