use rand::Rng as _;

use crate::matrix::Matrix;
use crate::rng::rng;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    /// Sum of squared distances from each row to its centroid.
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(row, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding from `seed`.
fn seed_centroids(data: &Matrix, k: usize, seed: u64) -> Matrix {
    let (n, d) = data.shape();
    let mut r = rng(seed);
    let mut chosen = Vec::with_capacity(k);
    chosen.push(r.gen_range(0..n));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let target = r.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &di) in dist.iter().enumerate() {
                acc += di;
                if di > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // round-off can leave `acc` a hair below `target`
            pick.unwrap_or_else(|| dist.iter().rposition(|&x| x > 0.0).expect("total > 0"))
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(data.row(i), data.row(next)));
        }
    }
    let mut centroids = Matrix::zeros(k, d);
    for (c, &i) in chosen.iter().enumerate() {
        centroids.row_mut(c).copy_from_slice(data.row(i));
    }
    centroids
}

/// Moves the point farthest from its own centroid into each empty cluster.
fn fill_empty_clusters(data: &Matrix, centroids: &Matrix, assignments: &mut [usize], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut best: Option<(usize, f64)> = None;
        for (i, &a) in assignments.iter().enumerate() {
            if counts[a] < 2 {
                continue;
            }
            let d = sq_dist(data.row(i), centroids.row(a));
            if best.map_or(true, |(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        match best {
            Some((i, _)) => assignments[i] = empty,
            None => return,
        }
    }
}

fn recompute(data: &Matrix, assignments: &[usize], k: usize, previous: &Matrix) -> Matrix {
    let d = data.cols();
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, &x) in sums.row_mut(a).iter_mut().zip(data.row(i)) {
            *s += x;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            sums.row_mut(c).copy_from_slice(previous.row(c));
        } else {
            let inv = counts[c] as f64;
            sums.row_mut(c).iter_mut().for_each(|s| *s /= inv);
        }
    }
    sums
}

/// Lloyd's algorithm with k-means++ seeding; deterministic for a given seed.
pub fn kmeans(data: &Matrix, k: usize, seed: u64, max_iters: usize) -> KMeansResult {
    let n = data.rows();
    assert!(k >= 1 && k <= n, "k must be in 1..=rows");
    let mut centroids = seed_centroids(data, k, seed);
    let mut assignments: Vec<usize> = (0..n).map(|i| nearest(data.row(i), &centroids).0).collect();
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        fill_empty_clusters(data, &centroids, &mut assignments, k);
        centroids = recompute(data, &assignments, k, &centroids);
        let next: Vec<usize> = (0..n).map(|i| nearest(data.row(i), &centroids).0).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    fill_empty_clusters(data, &centroids, &mut assignments, k);
    centroids = recompute(data, &assignments, k, &centroids);
    let inertia = (0..n)
        .map(|i| sq_dist(data.row(i), centroids.row(assignments[i])))
        .sum();
    KMeansResult {
        centroids,
        assignments,
        inertia,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_tight_pairs() {
        let data = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.2, 0.0],
            vec![5.0, 5.0],
            vec![5.0, 5.4],
        ])
        .unwrap();
        for seed in 0..10 {
            let km = kmeans(&data, 2, seed, 100);
            assert_eq!(km.assignments[0], km.assignments[1]);
            assert_eq!(km.assignments[2], km.assignments[3]);
            assert_ne!(km.assignments[0], km.assignments[2]);
            let a = km.assignments[0];
            assert!((km.centroids[(a, 0)] - 0.1).abs() < 1e-15);
            let b = km.assignments[2];
            assert!((km.centroids[(b, 1)] - 5.2).abs() < 1e-15);
            // each row sits half its pair separation from the centroid
            for (i, half) in [(0, 0.1), (1, 0.1), (2, 0.2), (3, 0.2)] {
                let dist = sq_dist(data.row(i), km.centroids.row(km.assignments[i])).sqrt();
                assert!((dist - half).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let data = Matrix::from_fn(12, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * i as f64);
        let a = kmeans(&data, 4, 9, 100);
        let b = kmeans(&data, 4, 9, 100);
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn duplicates_do_not_leave_empty_clusters() {
        let data = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0], vec![2.0, 0.0]]).unwrap();
        let km = kmeans(&data, 3, 1, 50);
        let mut counts = [0; 3];
        for &a in &km.assignments {
            counts[a] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
    }
}
