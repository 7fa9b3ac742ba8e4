use crate::error::{Error, Result};
use crate::ndcore::tensor::squared_distance;
use crate::ndcore::{RngStream, Tensor};

pub const KMEANS_ITERATIONS: usize = 25;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Tensor,
    pub assignment: Vec<usize>,
    /// Objective after every centroid update.
    pub trace: Vec<f64>,
}

/// Index of the nearest centroid, ties to the lower index.
pub fn nearest(centroids: &Tensor, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = squared_distance(centroids.row(c), x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn objective(x: &Tensor, centroids: &Tensor, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &a)| squared_distance(x.row(i), centroids.row(a))).sum()
}

/// Lloyd iterations from `c` distinct seeded rows. An empty cluster takes
/// over the point farthest from its current centroid.
pub fn kmeans(x: &Tensor, c: usize, seed: u64) -> Result<KMeans> {
    let (n, d) = (x.rows(), x.cols());
    if c == 0 || c > n {
        return Err(Error::invalid(format!("k-means needs 1 ≤ c ≤ n, got c = {c}, n = {n}")));
    }
    let init = RngStream::new(seed).sample_without_replacement(n, c);
    let mut centroids = x.select_rows(&init);
    let mut assignment = vec![0; n];
    let mut trace = Vec::with_capacity(KMEANS_ITERATIONS);
    for _ in 0..KMEANS_ITERATIONS {
        let mut cost = vec![0.0; n];
        for i in 0..n {
            (assignment[i], cost[i]) = nearest(&centroids, x.row(i));
        }
        let mut sizes = vec![0usize; c];
        for &a in &assignment {
            sizes[a] += 1;
        }
        for k in 0..c {
            if sizes[k] > 0 {
                continue;
            }
            let mut far: Option<usize> = None;
            for i in 0..n {
                if sizes[assignment[i]] > 1 && far.is_none_or(|f| cost[i] > cost[f]) {
                    far = Some(i);
                }
            }
            let Some(p) = far else { break };
            sizes[assignment[p]] -= 1;
            assignment[p] = k;
            sizes[k] = 1;
            cost[p] = 0.0;
        }
        let mut sums = Tensor::zeros(&[c, d]);
        for i in 0..n {
            for (s, v) in sums.row_mut(assignment[i]).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for k in 0..c {
            if sizes[k] > 0 {
                let inv = 1.0 / sizes[k] as f64;
                for (dst, s) in centroids.row_mut(k).iter_mut().zip(sums.row(k)) {
                    *dst = s * inv;
                }
            }
        }
        trace.push(objective(x, &centroids, &assignment));
    }
    for i in 0..n {
        assignment[i] = nearest(&centroids, x.row(i)).0;
    }
    Ok(KMeans { centroids, assignment, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_clumps() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![if i < 10 { 0.0 } else { 10.0 } + 0.01 * i as f64, 1.0]).collect();
        let km = kmeans(&Tensor::from_rows(&rows).unwrap(), 2, 3).unwrap();
        assert!(km.assignment[..10].iter().all(|&a| a == km.assignment[0]));
        assert!(km.assignment[10..].iter().all(|&a| a == km.assignment[10]));
        assert_ne!(km.assignment[0], km.assignment[10]);
    }

    #[test]
    fn duplicate_points_reseed_empty_clusters() {
        let mut rows = vec![vec![0.0, 0.0]; 6];
        rows.push(vec![5.0, 5.0]);
        let km = kmeans(&Tensor::from_rows(&rows).unwrap(), 3, 0).unwrap();
        assert!(km.trace.iter().all(|v| v.is_finite()));
        assert!(*km.trace.last().unwrap() < 1e-12);
    }

    #[test]
    fn rejects_bad_cluster_counts() {
        let x = Tensor::zeros(&[3, 2]);
        assert!(kmeans(&x, 0, 0).is_err() && kmeans(&x, 4, 0).is_err());
    }
}
