//! Lloyd's k-means with k-means++ seeding and restarts.

use ndarray::{Array2, ArrayView1};
use rand::Rng;

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_plus_plus<R: Rng + ?Sized>(data: &Array2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = data.nrows();
    let mut centroids = Array2::zeros((k, data.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut d2: Vec<f64> = data
        .rows()
        .into_iter()
        .map(|p| sq_dist(p, centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, p) in data.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centroids.row(c)));
        }
    }
    centroids
}

/// Moves points into empty clusters until every cluster has a member. The
/// donor is the point farthest from its centroid among clusters with more
/// than one member.
fn repair_empty(data: &Array2<f64>, assignments: &mut [usize], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..data.nrows())
            .filter(|&i| sizes[assignments[i]] > 1)
            .map(|i| (i, sq_dist(data.row(i), centroids.row(assignments[i]))))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        let Some((i, _)) = donor else {
            return;
        };
        assignments[i] = empty;
        centroids.row_mut(empty).assign(&data.row(i));
    }
}

fn update_centroids(data: &Array2<f64>, assignments: &[usize], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    let mut sums = Array2::<f64>::zeros(centroids.dim());
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        let mut row = sums.row_mut(a);
        row += &data.row(i);
        counts[a] += 1;
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            let mean = sums.row(c).mapv(|x| x / count as f64);
            centroids.row_mut(c).assign(&mean);
        }
    }
}

fn single_run<R: Rng + ?Sized>(
    data: &Array2<f64>,
    k: usize,
    max_iter: usize,
    rng: &mut R,
) -> KMeansResult {
    let mut centroids = seed_plus_plus(data, k, rng);
    let mut assignments: Vec<usize> = data
        .rows()
        .into_iter()
        .map(|p| nearest(p, &centroids).0)
        .collect();
    repair_empty(data, &mut assignments, &mut centroids);
    for _ in 0..max_iter {
        update_centroids(data, &assignments, &mut centroids);
        let next: Vec<usize> = data
            .rows()
            .into_iter()
            .map(|p| nearest(p, &centroids).0)
            .collect();
        let changed = next != assignments;
        assignments = next;
        repair_empty(data, &mut assignments, &mut centroids);
        if !changed {
            break;
        }
    }
    update_centroids(data, &assignments, &mut centroids);
    let inertia = assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(data.row(i), centroids.row(a)))
        .sum();
    KMeansResult {
        assignments,
        centroids,
        inertia,
    }
}

/// Best of `restarts` k-means runs by inertia. Every cluster is nonempty
/// whenever `data.nrows() >= k`.
pub fn kmeans<R: Rng + ?Sized>(
    data: &Array2<f64>,
    k: usize,
    restarts: usize,
    max_iter: usize,
    rng: &mut R,
) -> KMeansResult {
    assert!(
        k >= 1 && k <= data.nrows(),
        "k={k} for {} points",
        data.nrows()
    );
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let run = single_run(data, k, max_iter, rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}
