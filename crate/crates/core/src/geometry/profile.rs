//! Probe-based geometry profile of an embedding cloud.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mle::{dedup_rows, mle_id};
use super::spectral::{dominant_of, local_eigs, n80, neighborhood, participation_ratio, pr_from_eigs};
use crate::error::{Error, Result};
use crate::ndcore::{RngStream, Tensor};

pub const DEFAULT_K: usize = 20;
pub const DEFAULT_PROBES: usize = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryProfile {
    pub global_pr: f64,
    pub mle_id: f64,
    pub local_n80_mean: f64,
    /// Population standard deviation over probes.
    pub local_n80_std: f64,
    /// Mean participation ratio of each probe's local spectrum.
    pub local_pr_mean: f64,
    pub probe_count: usize,
    pub k_neighbors: usize,
    pub dominant_dim_histogram: BTreeMap<usize, usize>,
    pub duplicates_removed: usize,
    pub embedding_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub probe_id: usize,
    /// Row of the probe in the original (pre-dedup) embedding matrix.
    pub row: usize,
    pub n80: usize,
    pub local_pr: f64,
    pub dominant_dim: usize,
}

/// Profile plus per-probe records. Rows within the duplicate tolerance of an
/// earlier row are collapsed first and counted.
pub fn geometry_profile(e: &Tensor, n_probes: usize, k: usize, seed: u64) -> Result<(GeometryProfile, Vec<ProbeRecord>)> {
    let keep = dedup_rows(e);
    let u = e.select_rows(&keep);
    if n_probes == 0 || n_probes > u.rows() {
        return Err(Error::invalid(format!("n_probes {n_probes} must lie in [1, {}]", u.rows())));
    }
    let global_pr = participation_ratio(&u)?;
    let mle = mle_id(&u, k.min(u.rows() - 1))?;
    let probes = RngStream::new(seed).sample_without_replacement(u.rows(), n_probes);
    let records: Vec<ProbeRecord> = probes
        .par_iter()
        .enumerate()
        .map(|(id, &p)| {
            let nb = u.select_rows(&neighborhood(&u, p, k)?);
            let eigs = local_eigs(&nb)?;
            Ok(ProbeRecord {
                probe_id: id,
                row: keep[p],
                n80: n80(&eigs)?,
                local_pr: pr_from_eigs(&eigs)?,
                dominant_dim: dominant_of(&nb)?,
            })
        })
        .collect::<Result<_>>()?;
    let m = records.len() as f64;
    let n80_mean = records.iter().map(|r| r.n80 as f64).sum::<f64>() / m;
    let n80_var = records.iter().map(|r| (r.n80 as f64 - n80_mean).powi(2)).sum::<f64>() / m;
    let mut hist = BTreeMap::new();
    for r in &records {
        *hist.entry(r.dominant_dim).or_insert(0) += 1;
    }
    let profile = GeometryProfile {
        global_pr,
        mle_id: mle,
        local_n80_mean: n80_mean,
        local_n80_std: n80_var.sqrt(),
        local_pr_mean: records.iter().map(|r| r.local_pr).sum::<f64>() / m,
        probe_count: records.len(),
        k_neighbors: k,
        dominant_dim_histogram: hist,
        duplicates_removed: e.rows() - keep.len(),
        embedding_dim: e.cols(),
    };
    Ok((profile, records))
}

#[derive(Serialize)]
struct ProbeRow {
    probe_id: usize,
    row: usize,
    col: usize,
    patch: usize,
    n80: usize,
    local_pr: f64,
    dominant_dim: usize,
}

/// Writes `profile.json` and `probes.csv`; `locations[i]` is the grid
/// position of embedding row `i`.
pub fn write_profile(dir: &Path, profile: &GeometryProfile, probes: &[ProbeRecord], locations: &[(usize, usize)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("profile.json");
    fs::write(&path, serde_json::to_vec_pretty(profile)?).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("probes.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    for p in probes {
        let (row, col) = locations[p.row];
        w.serialize(ProbeRow {
            probe_id: p.probe_id,
            row,
            col,
            patch: p.row,
            n80: p.n80,
            local_pr: p.local_pr,
            dominant_dim: p.dominant_dim,
        })?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}
