//! Cross-validated skill, permutation importance, regional skill, joint gain
//! and the dimension dictionary.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::folds::{block_of, spatial_blocks, FoldAssignment};
use super::forest::{rf_fit, rf_predict, RfConfig, RfModel, Target};
use crate::error::{Error, Result};
use crate::ndcore::stats::spearman;
use crate::ndcore::{RngStream, Tensor};
use crate::synthgen::{PatchCorpus, Source, Variable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    R2,
    Accuracy,
}

impl MetricKind {
    pub fn of(target: &Target) -> Self {
        if target.is_categorical() {
            MetricKind::Accuracy
        } else {
            MetricKind::R2
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::R2 => "r2",
            MetricKind::Accuracy => "accuracy",
        }
    }
}

/// `1 − SS_res / SS_tot` about the mean of `y`.
pub fn r2_score(y: &[f64], pred: &[f64]) -> Result<f64> {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ZeroVariance("R² of a constant target".into()));
    }
    let ss_res: f64 = y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn accuracy(y: &[u32], pred: &[f64]) -> f64 {
    y.iter().zip(pred).filter(|(a, b)| **a as f64 == **b).count() as f64 / y.len() as f64
}

pub fn score(target: &Target, pred: &[f64]) -> Result<f64> {
    match target {
        Target::Continuous(y) => r2_score(y, pred),
        Target::Categorical(y) => Ok(accuracy(y, pred)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub metric: MetricKind,
    pub value: f64,
    pub n_folds: usize,
    /// Pooled out-of-fold predictions, one per patch.
    pub oof: Vec<f64>,
}

/// Out-of-fold predictions pooled over all folds, scored once.
pub fn cv_score(e: &Tensor, y: &Target, folds: &FoldAssignment, cfg: &RfConfig) -> Result<CvResult> {
    if folds.len() != e.rows() || y.len() != e.rows() {
        return Err(Error::invalid("fold assignment, features and target are not row-aligned"));
    }
    let mut oof = vec![f64::NAN; e.rows()];
    for f in 0..folds.n_folds {
        let (train, test) = folds.split(f);
        if test.is_empty() {
            return Err(Error::EmptyFold { fold: f });
        }
        if train.len() < cfg.min_leaf.max(1) * 2 {
            return Err(Error::FoldTooSmall { fold: f, rows: train.len(), min_leaf: cfg.min_leaf });
        }
        let sub = RfConfig { seed: cfg.seed.wrapping_add(f as u64), ..cfg.clone() };
        let model = rf_fit(&e.select_rows(&train), &y.select(&train), &sub)?;
        let pred = rf_predict(&model, &e.select_rows(&test))?;
        for (&i, p) in test.iter().zip(pred) {
            oof[i] = p;
        }
    }
    Ok(CvResult { metric: MetricKind::of(y), value: score(y, &oof)?, n_folds: folds.n_folds, oof })
}

/// Baseline score minus the mean score with column `j` permuted, per column.
/// `permute(j, repeat)` supplies the row permutation; results are raw (may be
/// negative).
pub fn perm_importance_with(
    model: &RfModel,
    x: &Tensor,
    y: &Target,
    repeats: usize,
    mut permute: impl FnMut(usize, usize) -> Vec<usize>,
) -> Result<Vec<f64>> {
    if repeats == 0 {
        return Err(Error::invalid("permutation importance needs at least one repeat"));
    }
    let base = score(y, &rf_predict(model, x)?)?;
    let mut out = Vec::with_capacity(x.cols());
    for j in 0..x.cols() {
        let col = x.column(j);
        let mut total = 0.0;
        for r in 0..repeats {
            let perm = permute(j, r);
            let mut xp = x.clone();
            for (i, &p) in perm.iter().enumerate() {
                xp.set(i, j, col[p]);
            }
            total += score(y, &rf_predict(model, &xp)?)?;
        }
        out.push(base - total / repeats as f64);
    }
    Ok(out)
}

pub fn perm_importance(model: &RfModel, x: &Tensor, y: &Target, rng: &mut RngStream, repeats: usize) -> Result<Vec<f64>> {
    let n = x.rows();
    perm_importance_with(model, x, y, repeats, |_, _| rng.permutation(n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSkill {
    pub region: usize,
    pub n_patches: usize,
    pub metric: MetricKind,
    pub value: Option<f64>,
    pub reason: Option<String>,
}

/// Region tiling and the spatial blocking used inside each region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionConfig {
    pub region_rows: usize,
    pub region_cols: usize,
    pub block_rows: usize,
    pub block_cols: usize,
    pub n_folds: usize,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self { region_rows: 2, region_cols: 2, block_rows: 3, block_cols: 3, n_folds: 3 }
    }
}

/// Patch indices of each region under the tiling.
pub fn region_members(locations: &[(usize, usize)], extent: (usize, usize), rc: &RegionConfig) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); rc.region_rows * rc.region_cols];
    for (i, &l) in locations.iter().enumerate() {
        members[block_of(l, extent, rc.region_rows, rc.region_cols)].push(i);
    }
    members
}

/// Cross-validated skill computed independently inside each region.
pub fn region_skill(
    e: &Tensor,
    y: &Target,
    locations: &[(usize, usize)],
    extent: (usize, usize),
    rc: &RegionConfig,
    cfg: &RfConfig,
) -> Result<Vec<RegionSkill>> {
    let metric = MetricKind::of(y);
    let mut out = Vec::new();
    for (region, idx) in region_members(locations, extent, rc).into_iter().enumerate() {
        let null = |reason: String| RegionSkill { region, n_patches: idx.len(), metric, value: None, reason: Some(reason) };
        if idx.len() < 2 * rc.n_folds {
            out.push(null(format!("{} patches, fewer than 2·F = {}", idx.len(), 2 * rc.n_folds)));
            continue;
        }
        let ys = y.select(&idx);
        if ys.is_constant() {
            out.push(null("zero variance".into()));
            continue;
        }
        // Blocks tile the region's own bounding box.
        let locs: Vec<(usize, usize)> = idx.iter().map(|&i| locations[i]).collect();
        let (r0, c0) = locs.iter().fold((usize::MAX, usize::MAX), |a, l| (a.0.min(l.0), a.1.min(l.1)));
        let (r1, c1) = locs.iter().fold((0, 0), |a, l| (a.0.max(l.0), a.1.max(l.1)));
        let local: Vec<(usize, usize)> = locs.iter().map(|l| (l.0 - r0, l.1 - c0)).collect();
        let folds = match spatial_blocks(&local, (r1 - r0 + 1, c1 - c0 + 1), rc.block_rows, rc.block_cols, rc.n_folds) {
            Ok(f) => f,
            Err(e) => {
                out.push(null(e.to_string()));
                continue;
            }
        };
        match cv_score(&e.select_rows(&idx), &ys, &folds, cfg) {
            Ok(r) => out.push(RegionSkill { region, n_patches: idx.len(), metric, value: Some(r.value), reason: None }),
            Err(e) => out.push(null(e.to_string())),
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointGain {
    pub r2_a: f64,
    pub r2_b: f64,
    pub r2_joint: f64,
    pub delta: f64,
}

/// Skill of the concatenated embeddings over the better single source.
pub fn joint_gain(ea: &Tensor, eb: &Tensor, y: &Target, folds: &FoldAssignment, cfg: &RfConfig) -> Result<JointGain> {
    if ea.rows() != eb.rows() {
        return Err(Error::invalid("joint_gain inputs are not row-aligned"));
    }
    // Unless set, every fit considers all of its features at each node, so
    // duplicated columns cannot add split candidates.
    let cfg = &RfConfig { features_per_split: Some(cfg.features_per_split.unwrap_or(usize::MAX)), ..cfg.clone() };
    let r2_a = cv_score(ea, y, folds, cfg)?.value;
    let r2_b = cv_score(eb, y, folds, cfg)?.value;
    let r2_joint = cv_score(&Tensor::hstack(&[ea, eb])?, y, folds, cfg)?.value;
    Ok(JointGain { r2_a, r2_b, r2_joint, delta: r2_joint - r2_a.max(r2_b) })
}

pub fn target_of(corpus: &PatchCorpus, v: Variable) -> Target {
    if v.is_categorical() {
        Target::Categorical(corpus.label_column(v).iter().map(|&c| c as u32).collect())
    } else {
        Target::Continuous(corpus.label_column(v))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillEntry {
    pub variable: Variable,
    pub source: Source,
    pub metric: MetricKind,
    pub value: f64,
    pub n_folds: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SkillMatrix {
    pub entries: Vec<SkillEntry>,
}

impl SkillMatrix {
    pub fn get(&self, v: Variable, s: Source) -> Option<&SkillEntry> {
        self.entries.iter().find(|e| e.variable == v && e.source == s)
    }

    /// Source with the highest value for a variable (first on ties).
    pub fn best_source(&self, v: Variable) -> Option<Source> {
        let mut best: Option<&SkillEntry> = None;
        for e in self.entries.iter().filter(|e| e.variable == v) {
            if best.is_none_or(|b| e.value > b.value) {
                best = Some(e);
            }
        }
        best.map(|e| e.source)
    }

    /// Continuous variable a source predicts best (first on ties).
    pub fn best_variable(&self, s: Source) -> Option<Variable> {
        let mut best: Option<&SkillEntry> = None;
        for e in self.entries.iter().filter(|e| e.source == s && e.metric == MetricKind::R2) {
            if best.is_none_or(|b| e.value > b.value) {
                best = Some(e);
            }
        }
        best.map(|e| e.variable)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        w.write_record(["variable", "source", "metric", "value"])?;
        for e in &self.entries {
            w.write_record([e.variable.name(), e.source.name(), e.metric.name(), &format!("{}", e.value)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// One metric per (variable, source) over the given embeddings.
pub fn skill_matrix(
    embeddings: &[(Source, &Tensor)],
    corpus: &PatchCorpus,
    variables: &[Variable],
    folds: &FoldAssignment,
    cfg: &RfConfig,
) -> Result<SkillMatrix> {
    let mut entries = Vec::new();
    for &v in variables {
        let y = target_of(corpus, v);
        for &(s, e) in embeddings {
            let r = cv_score(e, &y, folds, cfg)?;
            entries.push(SkillEntry { variable: v, source: s, metric: r.metric, value: r.value, n_folds: r.n_folds });
        }
    }
    Ok(SkillMatrix { entries })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionEntry {
    pub dim: usize,
    /// Importance floored at zero.
    pub importance: f64,
    /// Spearman ρ against the label; `None` for categorical labels or
    /// constant dimensions.
    pub spearman: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DimensionDictionary {
    pub variables: BTreeMap<String, Vec<DimensionEntry>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DictionaryConfig {
    pub top_k: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        Self { top_k: 5, repeats: 2, seed: 0 }
    }
}

/// Top dimensions per variable by permutation importance, measured on the
/// held-out rows of fold 0 with a forest fitted on the other folds.
pub fn dimension_dictionary(
    e: &Tensor,
    corpus: &PatchCorpus,
    variables: &[Variable],
    folds: &FoldAssignment,
    cfg: &RfConfig,
    dc: &DictionaryConfig,
) -> Result<DimensionDictionary> {
    let (train, test) = folds.split(0);
    let (xtr, xte) = (e.select_rows(&train), e.select_rows(&test));
    let mut variables_out = BTreeMap::new();
    for (vi, &v) in variables.iter().enumerate() {
        let y = target_of(corpus, v);
        let (ytr, yte) = (y.select(&train), y.select(&test));
        if ytr.is_constant() || yte.is_constant() {
            variables_out.insert(v.name().to_string(), Vec::new());
            continue;
        }
        let model = rf_fit(&xtr, &ytr, cfg)?;
        let mut rng = RngStream::derived(dc.seed, vi as u64);
        let imp = perm_importance(&model, &xte, &yte, &mut rng, dc.repeats)?;
        let mut order: Vec<usize> = (0..imp.len()).collect();
        order.sort_by(|&a, &b| imp[b].total_cmp(&imp[a]).then(a.cmp(&b)));
        let labels = y.values();
        let entries = order
            .into_iter()
            .take(dc.top_k)
            .map(|d| DimensionEntry {
                dim: d,
                importance: imp[d].max(0.0),
                spearman: if v.is_categorical() { None } else { spearman(&e.column(d), &labels).ok() },
            })
            .collect();
        variables_out.insert(v.name().to_string(), entries);
    }
    Ok(DimensionDictionary { variables: variables_out })
}

/// Writes `regions.csv` rows `(variable, source, region, n_patches, metric, value, reason)`.
pub fn write_regions_csv(path: &Path, rows: &[(Variable, Source, RegionSkill)]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    w.write_record(["variable", "source", "region", "n_patches", "metric", "value", "reason"])?;
    for (v, s, r) in rows {
        w.write_record([
            v.name(),
            s.name(),
            &r.region.to_string(),
            &r.n_patches.to_string(),
            r.metric.name(),
            &r.value.map(|x| x.to_string()).unwrap_or_default(),
            r.reason.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
