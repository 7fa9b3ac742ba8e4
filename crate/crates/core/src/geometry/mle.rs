//! Levina–Bickel maximum-likelihood intrinsic dimensionality.

use crate::error::{Error, Result};
use crate::ndcore::tensor::squared_distance;
use crate::ndcore::Tensor;

/// Rows closer than this are treated as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// Indices of rows that are not within [`DUPLICATE_TOL`] of an earlier row.
pub fn dedup_rows(e: &Tensor) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::with_capacity(e.rows());
    for i in 0..e.rows() {
        if keep.iter().all(|&j| squared_distance(e.row(i), e.row(j)).sqrt() > DUPLICATE_TOL) {
            keep.push(i);
        }
    }
    keep
}

/// Per-point estimates followed by the inverse of the mean inverse.
pub fn mle_id(e: &Tensor, k: usize) -> Result<f64> {
    let n = e.rows();
    if k < 2 || k >= n {
        return Err(Error::invalid(format!("mle_id needs 2 ≤ k < n, got k = {k}, n = {n}")));
    }
    let mut dups = Vec::new();
    let mut inv_sum = 0.0;
    for i in 0..n {
        let mut d: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dist = squared_distance(e.row(i), e.row(j)).sqrt();
                if dist <= DUPLICATE_TOL && i < j {
                    dups.push((i, j));
                }
                dist
            })
            .collect();
        d.select_nth_unstable_by(k - 1, f64::total_cmp);
        let mut nearest = d[..k].to_vec();
        nearest.sort_by(f64::total_cmp);
        if nearest[0] <= DUPLICATE_TOL {
            continue;
        }
        let tk = nearest[k - 1];
        inv_sum += nearest[..k - 1].iter().map(|tj| (tk / tj).ln()).sum::<f64>() / (k as f64 - 1.0);
    }
    if !dups.is_empty() {
        return Err(Error::DuplicatePoints { pairs: dups });
    }
    if inv_sum <= 0.0 {
        return Err(Error::ZeroVariance("all neighbour distances are equal".into()));
    }
    Ok(n as f64 / inv_sum)
}
