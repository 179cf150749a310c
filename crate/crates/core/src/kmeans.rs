//! Lloyd's k-means with seeded k-means++ initialisation.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, stream};

#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid after each
    /// assignment step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from(derive_seed(seed, &[stream::KMEANS]));
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, &d) in dist.iter().enumerate() {
                if target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[chosen].clone());
        let newest = centroids.last().unwrap();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, newest));
        }
    }
    centroids
}

/// Runs Lloyd iterations until the assignment is a fixpoint or `max_iter`
/// is reached. Empty clusters keep their previous centroid.
pub fn fit(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::InvalidArgument(format!("{} points cannot form {k} clusters", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("k-means points have inconsistent dimensions".into()));
    }

    let mut centroids = kmeans_plus_plus(points, k, seed);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut objective_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut changed = false;
        let mut objective = 0.0;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (c, d) = nearest(p, &centroids);
            objective += d;
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        objective_history.push(objective);
        if !changed {
            converged = true;
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(KMeansFit { centroids, assignments, objective_history, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_too_few_points() {
        assert!(fit(&[vec![0.0]], 2, 0, 10).is_err());
        assert!(fit(&[vec![0.0]], 0, 0, 10).is_err());
    }

    #[test]
    fn duplicate_points_do_not_stall_init() {
        let pts = vec![vec![1.0, 1.0]; 5];
        let fit = fit(&pts, 3, 4, 100).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.objective_history.last(), Some(&0.0));
    }

    proptest! {
        #[test]
        fn objective_never_increases(
            pts in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 5..40),
            k in 1usize..5,
            seed in any::<u64>(),
        ) {
            let fit = fit(&pts, k.min(pts.len()), seed, 100).unwrap();
            for w in fit.objective_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
            }
        }
    }
}
