use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::RngStream;

/// Context/target split of a token grid. Both index lists are ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub context: Vec<usize>,
    pub target: Vec<usize>,
}

/// Visible token count: `round_half_even(frac·n)` clamped to `[1, n−1]`.
pub fn visible_count(n: usize, visible_frac: f64) -> usize {
    ((visible_frac * n as f64).round_ties_even() as usize).clamp(1, n - 1)
}

/// Samples a mask over an `n`-token square grid (row-major token order).
///
/// Targets are one contiguous rectangle of about a quarter of the grid
/// (never more than the target quota) topped up with uniform singletons.
pub fn sample_mask(rng: &mut RngStream, n: usize, visible_frac: f64) -> Result<MaskPlan> {
    if !(visible_frac > 0.0 && visible_frac < 1.0) {
        return Err(Error::invalid(format!("visible_frac {visible_frac} is outside (0, 1)")));
    }
    if n < 2 {
        return Err(Error::invalid("masking needs at least two tokens"));
    }
    let n_ctx = visible_count(n, visible_frac);
    let quota = n - n_ctx;
    let (gh, gw) = grid_shape(n);

    let goal = ((0.25 * n as f64).round() as usize).clamp(1, quota);
    let bh = ((goal as f64).sqrt().round() as usize).clamp(1, gh);
    let bw = (goal / bh).clamp(1, gw);
    let r0 = rng.index(gh - bh + 1);
    let c0 = rng.index(gw - bw + 1);

    let mut is_target = vec![false; n];
    for r in r0..r0 + bh {
        for c in c0..c0 + bw {
            is_target[r * gw + c] = true;
        }
    }
    let mut remaining: Vec<usize> = (0..n).filter(|&i| !is_target[i]).collect();
    let need = quota - bh * bw;
    for k in rng.sample_without_replacement(remaining.len(), need) {
        is_target[remaining[k]] = true;
    }
    remaining.clear();
    let target: Vec<usize> = (0..n).filter(|&i| is_target[i]).collect();
    let context: Vec<usize> = (0..n).filter(|&i| !is_target[i]).collect();
    Ok(MaskPlan { context, target })
}

/// Square grid when `n` is a perfect square, otherwise a single row.
fn grid_shape(n: usize) -> (usize, usize) {
    let g = (n as f64).sqrt().round() as usize;
    if g * g == n {
        (g, g)
    } else {
        (1, n)
    }
}
