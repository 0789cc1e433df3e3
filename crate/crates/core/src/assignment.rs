//! Linear assignment (Hungarian method, shortest augmenting path form).

use ndarray::Array2;

/// Minimum-cost assignment of every row to a distinct column.
///
/// Requires `rows <= cols`. Runs in `O(rows^2 * cols)` using row/column
/// potentials. Returns the column chosen for each row.
pub fn min_cost_assignment(cost: &Array2<f64>) -> Vec<usize> {
    let (n, m) = cost.dim();
    assert!(n <= m, "min_cost_assignment needs rows <= cols ({n} > {m})");
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; index 0 is the virtual root column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0; n];
    for j in 1..=m {
        if row_of[j] != 0 {
            assignment[row_of[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Maximum-weight injective matching between rows and columns of any shape.
///
/// Equivalent to padding the matrix square with zero-weight dummies: every
/// row of the smaller side is matched. Rows left over when `rows > cols`
/// map to `None`.
pub fn max_weight_matching(weights: &Array2<f64>) -> Vec<Option<usize>> {
    let (n, m) = weights.dim();
    if n <= m {
        let cost = weights.mapv(|w| -w);
        min_cost_assignment(&cost).into_iter().map(Some).collect()
    } else {
        let cost = weights.t().mapv(|w| -w);
        let col_to_row = min_cost_assignment(&cost);
        let mut out = vec![None; n];
        for (col, row) in col_to_row.into_iter().enumerate() {
            out[row] = Some(col);
        }
        out
    }
}

/// Total weight of a matching.
pub fn matching_weight(weights: &Array2<f64>, matching: &[Option<usize>]) -> f64 {
    matching
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| weights[[r, c]]))
        .sum()
}
