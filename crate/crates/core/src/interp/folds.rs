//! Spatial-block fold assignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    /// Fold id per patch.
    pub folds: Vec<usize>,
    /// Spatial block id per patch (row-major over the tiling).
    pub blocks: Vec<usize>,
    pub n_folds: usize,
    pub block_rows: usize,
    pub block_cols: usize,
}

impl FoldAssignment {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    /// (train rows, test rows) of fold `f`.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, &k) in self.folds.iter().enumerate() {
            if k == f {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }

    /// Restriction to a subset of patches (folds and blocks kept).
    pub fn subset(&self, idx: &[usize]) -> FoldAssignment {
        FoldAssignment {
            folds: idx.iter().map(|&i| self.folds[i]).collect(),
            blocks: idx.iter().map(|&i| self.blocks[i]).collect(),
            ..self.clone()
        }
    }
}

/// Block index of a grid location under a `block_rows × block_cols` tiling of
/// an `extent.0 × extent.1` grid.
pub fn block_of(loc: (usize, usize), extent: (usize, usize), block_rows: usize, block_cols: usize) -> usize {
    let br = (loc.0 * block_rows / extent.0).min(block_rows - 1);
    let bc = (loc.1 * block_cols / extent.1).min(block_cols - 1);
    br * block_cols + bc
}

/// Tiles the grid into blocks and deals blocks to folds round-robin.
pub fn spatial_blocks(
    locations: &[(usize, usize)],
    extent: (usize, usize),
    block_rows: usize,
    block_cols: usize,
    n_folds: usize,
) -> Result<FoldAssignment> {
    if n_folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {n_folds}")));
    }
    if block_rows == 0 || block_cols == 0 || extent.0 == 0 || extent.1 == 0 {
        return Err(Error::invalid("block tiling and grid extent must be positive"));
    }
    if let Some(&(r, c)) = locations.iter().find(|&&(r, c)| r >= extent.0 || c >= extent.1) {
        return Err(Error::invalid(format!("location ({r}, {c}) lies outside the {}x{} grid", extent.0, extent.1)));
    }
    let blocks: Vec<usize> = locations.iter().map(|&l| block_of(l, extent, block_rows, block_cols)).collect();
    let folds: Vec<usize> = blocks.iter().map(|b| b % n_folds).collect();
    let mut seen = vec![false; n_folds];
    for &f in &folds {
        seen[f] = true;
    }
    if let Some(fold) = seen.iter().position(|s| !s) {
        return Err(Error::EmptyFold { fold });
    }
    Ok(FoldAssignment { folds, blocks, n_folds, block_rows, block_cols })
}
