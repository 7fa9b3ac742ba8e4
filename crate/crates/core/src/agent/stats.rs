use crate::error::{Error, Result};
use crate::ndcore::stats::{mean, variance};
use crate::ndcore::RngStream;

/// Paired effect size: mean(a − b) / sd(a − b) with divisor n − 1.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("cohens_d needs paired scores, got {} and {}", a.len(), b.len())));
    }
    let deltas: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    cohens_d_deltas(&deltas)
}

pub fn cohens_d_deltas(deltas: &[f64]) -> Result<f64> {
    if deltas.len() < 2 {
        return Err(Error::invalid("cohens_d needs at least two pairs"));
    }
    let sd = variance(deltas).sqrt();
    if sd == 0.0 {
        return Err(Error::ZeroVariance("every paired delta is identical; Cohen's d is undefined".into()));
    }
    Ok(mean(deltas) / sd)
}

pub const MIN_BOOTSTRAP: usize = 1000;

/// Two-sided paired bootstrap p: twice the fraction of resampled means that
/// do not share the observed mean's sign, clipped to [1/B, 1].
pub fn paired_bootstrap_p(deltas: &[f64], b: usize, seed: u64) -> Result<f64> {
    if deltas.len() < 2 {
        return Err(Error::invalid("bootstrap needs at least two deltas"));
    }
    if b < MIN_BOOTSTRAP {
        return Err(Error::invalid(format!("bootstrap needs B ≥ {MIN_BOOTSTRAP}, got {b}")));
    }
    let observed = mean(deltas);
    if observed == 0.0 {
        return Ok(1.0);
    }
    let n = deltas.len();
    let mut rng = RngStream::new(seed);
    let mut opposite = 0usize;
    for _ in 0..b {
        let mut s = 0.0;
        for _ in 0..n {
            s += deltas[rng.index(n)];
        }
        let m = s / n as f64;
        if m * observed.signum() <= 0.0 {
            opposite += 1;
        }
    }
    Ok((2.0 * opposite as f64 / b as f64).clamp(1.0 / b as f64, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        assert!((cohens_d(&[0.0, 2.0], &[0.0, 0.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(cohens_d(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(cohens_d_deltas(&[1.0, 1.0, 1.0]).is_err());
        assert!(cohens_d(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn bootstrap_edges() {
        assert_eq!(paired_bootstrap_p(&[0.0; 5], 1000, 1).unwrap(), 1.0);
        assert_eq!(paired_bootstrap_p(&[1.0; 5], 2000, 1).unwrap(), 1.0 / 2000.0);
        assert!(paired_bootstrap_p(&[1.0; 5], 999, 1).is_err());
    }
}
