//! Spectral summaries: participation ratio, local spectra, n80 and the
//! locally dominant coordinate.

use crate::error::{Error, Result};
use crate::ndcore::tensor::squared_distance;
use crate::ndcore::{sym_eig, Tensor};

/// Fraction of variance an `n80` count must reach.
pub const N80_FRACTION: f64 = 0.80;
const N80_TOL: f64 = 1e-12;

/// `(Σλ)² / Σλ²`; eigenvalues below zero (round-off) count as zero.
pub fn pr_from_eigs(eigs: &[f64]) -> Result<f64> {
    let (s, s2) = eigs.iter().map(|&l| l.max(0.0)).fold((0.0, 0.0), |(a, b), l| (a + l, b + l * l));
    if s2 <= 0.0 {
        return Err(Error::ZeroVariance("participation ratio of an all-zero spectrum".into()));
    }
    Ok(s * s / s2)
}

/// Participation ratio of the column covariance of `e`.
pub fn participation_ratio(e: &Tensor) -> Result<f64> {
    if e.rows() < 2 {
        return Err(Error::invalid("participation ratio needs at least two rows"));
    }
    let cov = e.covariance();
    if cov.max_abs() == 0.0 {
        return Err(Error::ZeroVariance("all embedding rows are identical".into()));
    }
    pr_from_eigs(&sym_eig(&cov)?.values)
}

/// Smallest `m` whose leading eigenvalues hold at least 80% of the total.
pub fn n80(eigs: &[f64]) -> Result<usize> {
    let mut sorted: Vec<f64> = eigs.iter().map(|&l| l.max(0.0)).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sorted.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroVariance("n80 of an all-zero spectrum".into()));
    }
    let mut cum = 0.0;
    for (i, l) in sorted.iter().enumerate() {
        cum += l;
        if cum / total >= N80_FRACTION - N80_TOL {
            return Ok(i + 1);
        }
    }
    Ok(sorted.len())
}

/// The probe and its `k − 1` nearest rows (the probe counts as a neighbour);
/// ties in distance go to the lower index.
pub fn neighborhood(e: &Tensor, probe: usize, k: usize) -> Result<Vec<usize>> {
    if probe >= e.rows() {
        return Err(Error::invalid(format!("probe {probe} outside {} rows", e.rows())));
    }
    if k < 3 || k > e.rows() {
        return Err(Error::invalid(format!("neighbourhood size {k} must lie in [3, {}]", e.rows())));
    }
    let p = e.row(probe);
    let mut d: Vec<(f64, usize)> = (0..e.rows()).map(|i| (squared_distance(p, e.row(i)), i)).collect();
    d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut nb: Vec<(f64, usize)> = d[..k].to_vec();
    nb.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(nb.into_iter().map(|(_, i)| i).collect())
}

/// Covariance eigenvalues (length `d`, descending) of the probe's
/// `k`-neighbourhood.
pub fn local_spectrum(e: &Tensor, probe: usize, k: usize) -> Result<Vec<f64>> {
    let nb = e.select_rows(&neighborhood(e, probe, k)?);
    local_eigs(&nb)
}

/// Descending covariance eigenvalues of a point set, padded with zeros to
/// its dimension. Uses the `k × k` Gram matrix when `k < d`.
pub fn local_eigs(pts: &Tensor) -> Result<Vec<f64>> {
    let (k, d) = (pts.rows(), pts.cols());
    let xc = pts.centered();
    if xc.max_abs() == 0.0 {
        return Err(Error::ZeroVariance("neighbourhood points are identical".into()));
    }
    let mut vals = if k < d {
        let gram = xc.matmul_t(&xc).scale(1.0 / (k as f64 - 1.0));
        sym_eig(&symmetrize(gram))?.values
    } else {
        sym_eig(&pts.covariance())?.values
    };
    vals.truncate(d);
    vals.resize(d, 0.0);
    Ok(vals)
}

fn symmetrize(m: Tensor) -> Tensor {
    let t = m.transpose();
    m.add(&t).scale(0.5)
}

/// Coordinate with the largest variance over the probe's neighbourhood.
pub fn dominant_dimension(e: &Tensor, probe: usize, k: usize) -> Result<usize> {
    let nb = e.select_rows(&neighborhood(e, probe, k)?);
    dominant_of(&nb)
}

pub fn dominant_of(pts: &Tensor) -> Result<usize> {
    let xc = pts.centered();
    let mut best = (0, 0.0);
    for j in 0..xc.cols() {
        let v: f64 = (0..xc.rows()).map(|i| xc.at(i, j) * xc.at(i, j)).sum();
        if v > best.1 {
            best = (j, v);
        }
    }
    if best.1 == 0.0 {
        return Err(Error::ZeroVariance("neighbourhood points are identical".into()));
    }
    Ok(best.0)
}
