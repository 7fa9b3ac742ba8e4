//! CART random forests for regression (variance reduction) and
//! classification (Gini), with bootstrap resampling and per-node feature
//! sampling seeded from (tree id, node id).

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{RngStream, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// `None`: ⌈d/3⌉ for regression, ⌈√d⌉ for classification.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl RfConfig {
    /// Features sampled per node: ⌈d/3⌉ for regression, ⌈√d⌉ for
    /// classification unless set explicitly.
    pub fn features_for(&self, d: usize, categorical: bool) -> usize {
        let auto = if categorical { (d as f64).sqrt().ceil() as usize } else { d.div_ceil(3) };
        self.features_per_split.unwrap_or(auto).clamp(1, d.max(1))
    }
}

impl Default for RfConfig {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 12, min_leaf: 3, features_per_split: None, bootstrap: true, seed: 0 }
    }
}

/// Regression values or integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Continuous(Vec<f64>),
    Categorical(Vec<u32>),
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Continuous(v) => v.len(),
            Target::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Target {
        match self {
            Target::Continuous(v) => Target::Continuous(idx.iter().map(|&i| v[i]).collect()),
            Target::Categorical(v) => Target::Categorical(idx.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, Target::Categorical(_))
    }

    /// Values as f64 (class ids for categorical targets).
    pub fn values(&self) -> Vec<f64> {
        match self {
            Target::Continuous(v) => v.clone(),
            Target::Categorical(v) => v.iter().map(|&c| c as f64).collect(),
        }
    }

    pub fn is_constant(&self) -> bool {
        let v = self.values();
        v.iter().all(|&x| x == v[0])
    }
}

const LEAF: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Split feature, or `u32::MAX` for a leaf.
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    /// Leaf mean (regression) or majority class id (classification).
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            if n.feature == LEAF {
                return n.value;
            }
            i = if x[n.feature as usize] <= n.threshold { n.left } else { n.right } as usize;
        }
    }

    /// Longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.feature == LEAF {
                0
            } else {
                1 + walk(t, n.left as usize).max(walk(t, n.right as usize))
            }
        }
        walk(self, 0)
    }

    /// Features used by any split.
    pub fn used_features(&self) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.feature != LEAF).map(|n| n.feature as usize).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    /// `Some(k)` for a k-class classifier.
    pub n_classes: Option<usize>,
    pub config: RfConfig,
}

/// Mean that is exact when all values are equal.
pub fn exact_mean(v: &[f64]) -> f64 {
    if v.iter().all(|&x| x == v[0]) {
        v[0]
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Majority vote, ties to the lowest class id.
fn vote(classes: impl Iterator<Item = usize>, k: usize) -> usize {
    let mut counts = vec![0usize; k];
    for c in classes {
        counts[c] += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

struct Builder<'a> {
    x: &'a Tensor,
    y: Vec<f64>,
    n_classes: Option<usize>,
    cfg: &'a RfConfig,
    mtry: usize,
    tree_id: u64,
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn leaf_value(&self, idx: &[usize]) -> f64 {
        match self.n_classes {
            None => exact_mean(&idx.iter().map(|&i| self.y[i]).collect::<Vec<_>>()),
            Some(k) => vote(idx.iter().map(|&i| self.y[i] as usize), k) as f64,
        }
    }

    fn node_score(&self, idx: &[usize]) -> f64 {
        match self.n_classes {
            None => {
                let s: f64 = idx.iter().map(|&i| self.y[i]).sum();
                s * s / idx.len() as f64
            }
            Some(k) => {
                let mut c = vec![0.0; k];
                for &i in idx {
                    c[self.y[i] as usize] += 1.0;
                }
                c.iter().map(|v| v * v).sum::<f64>() / idx.len() as f64
            }
        }
    }

    /// Column-order independent tie-break: smaller left row set first, then
    /// the lexicographically smaller feature column.
    fn breaks_tie(&self, idx: &[usize], a: &Split, b: &Split) -> bool {
        let left = |s: &Split| {
            let mut v: Vec<usize> = idx.iter().copied().filter(|&i| self.x.at(i, s.feature) <= s.threshold).collect();
            v.sort_unstable();
            v
        };
        match left(a).cmp(&left(b)) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => {
                let (fa, fb) = (a.feature, b.feature);
                idx.iter().map(|&i| self.x.at(i, fa).total_cmp(&self.x.at(i, fb))).find(|o| o.is_ne())
                    == Some(Ordering::Less)
            }
        }
    }

    fn best_split(&self, idx: &[usize], node_id: u64) -> Option<Split> {
        let d = self.x.cols();
        let mut rng = RngStream::derived(self.cfg.seed ^ 0x5eed_f00d, (self.tree_id << 32) | node_id);
        let features = rng.sample_without_replacement(d, self.mtry);
        let base = self.node_score(idx);
        let n = idx.len();
        let min_leaf = self.cfg.min_leaf.max(1);
        let mut best: Option<Split> = None;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
        for f in features {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x.at(i, f), i)));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if pairs[0].0 == pairs[n - 1].0 {
                continue;
            }
            let k = self.n_classes.unwrap_or(0);
            let (mut left_counts, mut right_counts) = (vec![0.0; k], vec![0.0; k]);
            let total: f64 = pairs.iter().map(|p| self.y[p.1]).sum();
            if k > 0 {
                for p in &pairs {
                    right_counts[self.y[p.1] as usize] += 1.0;
                }
            }
            let (mut sl, mut sq_l, mut sq_r) = (0.0, 0.0, right_counts.iter().map(|v| v * v).sum::<f64>());
            for j in 0..n - 1 {
                let y = self.y[pairs[j].1];
                if k > 0 {
                    let c = y as usize;
                    sq_l += 2.0 * left_counts[c] + 1.0;
                    sq_r -= 2.0 * right_counts[c] - 1.0;
                    left_counts[c] += 1.0;
                    right_counts[c] -= 1.0;
                } else {
                    sl += y;
                }
                let nl = j + 1;
                if nl < min_leaf || n - nl < min_leaf || pairs[j].0 == pairs[j + 1].0 {
                    continue;
                }
                let (fl, fr) = (nl as f64, (n - nl) as f64);
                let score = if k > 0 {
                    sq_l / fl + sq_r / fr
                } else {
                    let sr = total - sl;
                    sl * sl / fl + sr * sr / fr
                };
                if score <= base + 1e-12 * base.abs().max(1.0) {
                    continue;
                }
                let cand = Split { feature: f, threshold: 0.5 * (pairs[j].0 + pairs[j + 1].0), score };
                let take = match &best {
                    None => true,
                    Some(b) if score == b.score => self.breaks_tie(idx, &cand, b),
                    Some(b) => score > b.score,
                };
                if take {
                    best = Some(cand);
                }
            }
        }
        best
    }

    fn build(&self, rows: Vec<usize>) -> Tree {
        let mut nodes: Vec<Node> = Vec::new();
        // (node slot, rows, depth)
        let mut stack = vec![(0usize, rows, 0usize)];
        nodes.push(Node { feature: LEAF, threshold: 0.0, left: 0, right: 0, value: 0.0 });
        while let Some((slot, idx, depth)) = stack.pop() {
            let pure = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
            let split = if depth >= self.cfg.max_depth || idx.len() < 2 * self.cfg.min_leaf.max(1) || pure {
                None
            } else {
                self.best_split(&idx, slot as u64)
            };
            match split {
                None => nodes[slot].value = self.leaf_value(&idx),
                Some(s) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        idx.iter().partition(|&&i| self.x.at(i, s.feature) <= s.threshold);
                    let (li, ri) = (nodes.len(), nodes.len() + 1);
                    for _ in 0..2 {
                        nodes.push(Node { feature: LEAF, threshold: 0.0, left: 0, right: 0, value: 0.0 });
                    }
                    nodes[slot] = Node {
                        feature: s.feature as u32,
                        threshold: s.threshold,
                        left: li as u32,
                        right: ri as u32,
                        value: self.leaf_value(&idx),
                    };
                    stack.push((ri, r, depth + 1));
                    stack.push((li, l, depth + 1));
                }
            }
        }
        Tree { nodes }
    }
}

pub fn rf_fit(x: &Tensor, y: &Target, cfg: &RfConfig) -> Result<RfModel> {
    let (n, d) = (x.rows(), x.cols());
    if d == 0 || !x.is_matrix() {
        return Err(Error::invalid("random forest needs at least one feature"));
    }
    if y.len() != n {
        return Err(Error::invalid(format!("{n} feature rows but {} targets", y.len())));
    }
    if n < 2 * cfg.min_leaf.max(1) || cfg.n_trees == 0 {
        return Err(Error::invalid(format!("random forest needs n ≥ 2·min_leaf and trees ≥ 1 (n = {n})")));
    }
    let (yv, n_classes) = match y {
        Target::Continuous(v) => {
            if v.iter().any(|t| !t.is_finite()) {
                return Err(Error::NonFinite("regression target"));
            }
            (v.clone(), None)
        }
        Target::Categorical(v) => (v.iter().map(|&c| c as f64).collect(), Some(*v.iter().max().unwrap() as usize + 1)),
    };
    let mtry = cfg.features_for(d, n_classes.is_some());
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let rows: Vec<usize> = if cfg.bootstrap {
                let mut rng = RngStream::derived(cfg.seed, t as u64);
                (0..n).map(|_| rng.index(n)).collect()
            } else {
                (0..n).collect()
            };
            let b = Builder { x, y: yv.clone(), n_classes, cfg, mtry, tree_id: t as u64 };
            b.build(rows)
        })
        .collect();
    Ok(RfModel { trees, n_features: d, n_classes, config: cfg.clone() })
}

impl RfModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let per_tree: Vec<f64> = self.trees.iter().map(|t| t.predict_row(x)).collect();
        match self.n_classes {
            None => exact_mean(&per_tree),
            Some(k) => vote(per_tree.iter().map(|&c| c as usize), k) as f64,
        }
    }
}

pub fn rf_predict(model: &RfModel, x: &Tensor) -> Result<Vec<f64>> {
    if x.cols() != model.n_features {
        return Err(Error::Shape {
            context: "rf_predict",
            expected: vec![x.rows(), model.n_features],
            actual: x.shape().to_vec(),
        });
    }
    Ok((0..x.rows()).map(|i| model.predict_row(x.row(i))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize, d: usize, seed: u64) -> Tensor {
        let mut r = RngStream::new(seed);
        Tensor::matrix(n, d, (0..n * d).map(|_| r.uniform()).collect())
    }

    fn r2(y: &[f64], p: &[f64]) -> f64 {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        let ss_res: f64 = y.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum();
        let ss_tot: f64 = y.iter().map(|a| (a - m).powi(2)).sum();
        1.0 - ss_res / ss_tot
    }

    #[test]
    fn constant_target_predicts_exactly() {
        let x = data(50, 3, 1);
        let y = Target::Continuous(vec![0.1; 50]);
        let m = rf_fit(&x, &y, &RfConfig { n_trees: 7, ..RfConfig::default() }).unwrap();
        assert!(rf_predict(&m, &data(20, 3, 2)).unwrap().iter().all(|&p| p == 0.1));
    }

    #[test]
    fn memorises_a_feature() {
        let x = data(300, 4, 3);
        let y = x.column(0);
        let m = rf_fit(&x, &Target::Continuous(y.clone()), &RfConfig { n_trees: 50, ..RfConfig::default() }).unwrap();
        assert!(r2(&y, &rf_predict(&m, &x).unwrap()) >= 0.95);
        assert!(m.trees.iter().all(|t| t.depth() <= 12));
    }

    #[test]
    fn deterministic_per_seed() {
        let x = data(80, 5, 4);
        let y = Target::Continuous(x.column(1).iter().map(|v| v * v).collect());
        let cfg = RfConfig { n_trees: 10, seed: 9, ..RfConfig::default() };
        assert_eq!(rf_fit(&x, &y, &cfg).unwrap(), rf_fit(&x, &y, &cfg).unwrap());
    }

    #[test]
    fn classifier_learns_threshold_and_votes_low_on_ties() {
        let x = data(200, 2, 5);
        let y: Vec<u32> = x.column(0).iter().map(|&v| u32::from(v > 0.5)).collect();
        let m = rf_fit(&x, &Target::Categorical(y.clone()), &RfConfig { n_trees: 20, ..RfConfig::default() }).unwrap();
        let p = rf_predict(&m, &x).unwrap();
        let acc = p.iter().zip(&y).filter(|(a, &b)| **a as u32 == b).count() as f64 / 200.0;
        assert!(acc > 0.95);
        assert_eq!(vote([1, 0, 0, 1].into_iter(), 2), 0);
    }

    #[test]
    fn depth_limit_holds() {
        let x = data(200, 3, 6);
        let y = Target::Continuous((0..200).map(|i| (i as f64).sin()).collect());
        let m = rf_fit(&x, &y, &RfConfig { n_trees: 5, max_depth: 3, ..RfConfig::default() }).unwrap();
        assert!(m.trees.iter().all(|t| t.depth() <= 3));
    }

    #[test]
    fn row_permutation_equivariance() {
        let x = data(60, 3, 7);
        let y = Target::Continuous(x.column(2));
        let m = rf_fit(&x, &y, &RfConfig { n_trees: 5, ..RfConfig::default() }).unwrap();
        let perm = RngStream::new(1).permutation(60);
        let a = rf_predict(&m, &x).unwrap();
        let b = rf_predict(&m, &x.select_rows(&perm)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(b[k], a[i]);
        }
    }

    #[test]
    fn column_order_invariance_with_all_features() {
        let x = data(100, 3, 8);
        let y: Vec<f64> = (0..100).map(|i| x.at(i, 0) + 2.0 * x.at(i, 2)).collect();
        let cfg = RfConfig { n_trees: 5, features_per_split: Some(3), ..RfConfig::default() };
        let m = rf_fit(&x, &Target::Continuous(y.clone()), &cfg).unwrap();
        let swap = |t: &Tensor| {
            let rows: Vec<Vec<f64>> = (0..t.rows()).map(|i| vec![t.at(i, 2), t.at(i, 1), t.at(i, 0)]).collect();
            Tensor::from_rows(&rows).unwrap()
        };
        let m2 = rf_fit(&swap(&x), &Target::Continuous(y), &cfg).unwrap();
        let probe = data(30, 3, 9);
        assert_eq!(rf_predict(&m, &probe).unwrap(), rf_predict(&m2, &swap(&probe)).unwrap());
    }

    #[test]
    fn rejects_empty_features_and_tiny_inputs() {
        let y = Target::Continuous(vec![1.0; 4]);
        assert!(rf_fit(&Tensor::matrix(4, 1, vec![0.0; 4]), &y, &RfConfig { min_leaf: 3, ..RfConfig::default() }).is_err());
    }
}
