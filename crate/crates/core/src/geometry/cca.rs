//! Ridge-whitened canonical correlation analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{sym_inv_sqrt, thin_svd, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CcaResult {
    /// Canonical correlations, descending, each in `[0, 1]`.
    pub correlations: Vec<f64>,
}

impl CcaResult {
    pub fn mean(&self) -> f64 {
        self.correlations.iter().sum::<f64>() / self.correlations.len() as f64
    }
}

fn default_ridge(c: &Tensor) -> f64 {
    let tr: f64 = (0..c.rows()).map(|i| c.at(i, i)).sum();
    1e-6 * tr / c.rows() as f64
}

/// Singular values of `(Cxx+εI)^{-1/2} Cxy (Cyy+εI)^{-1/2}`. `ridge = None`
/// uses `1e-6 · trace / dim` for each block.
pub fn cca(x: &Tensor, y: &Tensor, ridge: Option<f64>) -> Result<CcaResult> {
    let (n, p, q) = (x.rows(), x.cols(), y.cols());
    if y.rows() != n {
        return Err(Error::invalid(format!("cca inputs have {n} and {} rows", y.rows())));
    }
    if n <= p.max(q) {
        return Err(Error::invalid(format!("cca needs more rows ({n}) than columns ({})", p.max(q))));
    }
    if let Some(r) = ridge {
        if !(r >= 0.0) {
            return Err(Error::invalid(format!("cca ridge must be non-negative, got {r}")));
        }
    }
    let (xc, yc) = (x.centered(), y.centered());
    let scale = 1.0 / (n as f64 - 1.0);
    let cxx = x.covariance();
    let cyy = y.covariance();
    let cxy = xc.t_matmul(&yc).scale(scale);
    let wx = sym_inv_sqrt(&cxx, ridge.unwrap_or_else(|| default_ridge(&cxx)))?;
    let wy = sym_inv_sqrt(&cyy, ridge.unwrap_or_else(|| default_ridge(&cyy)))?;
    let m = wx.matmul(&cxy).matmul(&wy);
    let svd = thin_svd(&m)?;
    let count = p.min(q).min(n - 1);
    let mut correlations: Vec<f64> = svd.s.iter().take(count).map(|s| s.clamp(0.0, 1.0)).collect();
    correlations.sort_by(|a, b| b.total_cmp(a));
    Ok(CcaResult { correlations })
}
