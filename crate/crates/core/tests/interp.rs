use proptest::prelude::*;
use sensorfleet::interp::skill::{accuracy, region_members};
use sensorfleet::interp::*;
use sensorfleet::ndcore::{RngStream, Tensor};
use sensorfleet::synthgen::*;

fn brute_ranks(v: &[f64]) -> Vec<f64> {
    // Rank = 1 + count below + half the count of equal others.
    v.iter()
        .map(|&a| {
            let below = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn spearman_with_ties_matches_rank_oracle() {
    let x = [1.0, 2.0, 2.0, 4.0];
    let y = [1.0, 2.0, 3.0, 4.0];
    let oracle = brute_pearson(&brute_ranks(&x), &brute_ranks(&y));
    assert!((spearman(&x, &y).unwrap() - oracle).abs() < 1e-15);
    assert!((oracle - 0.9486832980505138).abs() < 1e-12);
}

fn grid_layout(side: usize) -> Vec<(usize, usize)> {
    (0..side * side).map(|i| (i / side, i % side)).collect()
}

fn random_matrix(rng: &mut RngStream, n: usize, d: usize) -> Tensor {
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.normal()).collect())
}

fn small_forest() -> RfConfig {
    RfConfig { n_trees: 30, max_depth: 10, min_leaf: 2, ..RfConfig::default() }
}

#[test]
fn pooled_r2_matches_an_independent_oracle() {
    let mut rng = RngStream::new(3);
    let locs = grid_layout(16);
    let x = random_matrix(&mut rng, locs.len(), 3);
    let y: Vec<f64> = (0..x.rows()).map(|i| x.at(i, 0) + 0.3 * rng.normal()).collect();
    let folds = spatial_blocks(&locs, (16, 16), 4, 4, 4).unwrap();
    let r = cv_score(&x, &Target::Continuous(y.clone()), &folds, &small_forest()).unwrap();
    assert!(r.oof.iter().all(|v| v.is_finite()));
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for i in 0..y.len() {
        ss_res += (y[i] - r.oof[i]).powi(2);
        ss_tot += (y[i] - mean).powi(2);
    }
    assert!((r.value - (1.0 - ss_res / ss_tot)).abs() < 1e-12);
    assert!(r.value > 0.5, "r2 = {}", r.value);
    assert_eq!(r.metric, MetricKind::R2);
}

#[test]
fn perfect_and_mean_predictions() {
    let y = [3.0, -1.0, 2.0, 0.5];
    assert_eq!(r2_score(&y, &y).unwrap(), 1.0);
    let m = y.iter().sum::<f64>() / 4.0;
    assert_eq!(r2_score(&y, &[m; 4]).unwrap(), 0.0);
}

#[test]
fn fold_too_small_is_rejected() {
    let locs = grid_layout(4);
    let x = Tensor::matrix(16, 1, (0..16).map(|i| i as f64).collect());
    let y = Target::Continuous((0..16).map(|i| i as f64).collect());
    let folds = spatial_blocks(&locs, (4, 4), 4, 4, 2).unwrap();
    let cfg = RfConfig { min_leaf: 5, n_trees: 3, ..RfConfig::default() };
    assert!(cv_score(&x, &y, &folds, &cfg).is_err());
}

#[test]
fn identity_permutation_gives_zero_importance() {
    let mut rng = RngStream::new(9);
    let x = random_matrix(&mut rng, 80, 4);
    let y = Target::Continuous((0..80).map(|i| x.at(i, 1)).collect());
    let model = rf_fit(&x, &y, &small_forest()).unwrap();
    let imp = perm_importance_with(&model, &x, &y, 3, |_, _| (0..80).collect()).unwrap();
    assert!(imp.iter().all(|&v| v == 0.0), "{imp:?}");
}

#[test]
fn unused_feature_has_negligible_importance() {
    let mut rng = RngStream::new(10);
    let mut x = random_matrix(&mut rng, 120, 3);
    for i in 0..120 {
        x.set(i, 2, 1.5);
    }
    let y = Target::Continuous((0..120).map(|i| x.at(i, 0) - x.at(i, 1)).collect());
    let model = rf_fit(&x, &y, &small_forest()).unwrap();
    assert!(model.trees.iter().all(|t| !t.used_features().contains(&2)));
    let imp = perm_importance(&model, &x, &y, &mut RngStream::new(1), 10).unwrap();
    assert!(imp[2].abs() < 0.01, "{imp:?}");
}

#[test]
fn leaked_target_ranks_first() {
    let mut rng = RngStream::new(11);
    let mut x = random_matrix(&mut rng, 150, 5);
    let y: Vec<f64> = (0..150).map(|i| 0.2 * x.at(i, 0) + rng.normal()).collect();
    for (i, &v) in y.iter().enumerate() {
        x.set(i, 3, v);
    }
    let target = Target::Continuous(y);
    let model = rf_fit(&x, &target, &small_forest()).unwrap();
    let imp = perm_importance(&model, &x, &target, &mut RngStream::new(2), 3).unwrap();
    let top = (0..5).max_by(|&a, &b| imp[a].total_cmp(&imp[b])).unwrap();
    assert_eq!(top, 3, "{imp:?}");
}

fn joint_setup(seed: u64) -> (Tensor, Tensor, FoldAssignment, RngStream) {
    let mut rng = RngStream::new(seed);
    let locs = grid_layout(16);
    let ea = random_matrix(&mut rng, locs.len(), 3);
    let eb = random_matrix(&mut rng, locs.len(), 3);
    let folds = spatial_blocks(&locs, (16, 16), 4, 4, 4).unwrap();
    (ea, eb, folds, rng)
}

#[test]
fn duplicated_embeddings_add_nothing() {
    let (ea, _, folds, mut rng) = joint_setup(20);
    let y = Target::Continuous((0..ea.rows()).map(|i| ea.at(i, 0).sin() + 0.5 * ea.at(i, 2) + 0.1 * rng.normal()).collect());
    let g = joint_gain(&ea, &ea, &y, &folds, &small_forest()).unwrap();
    assert_eq!(g.r2_a, g.r2_b);
    assert!(g.delta <= 0.01, "{g:?}");
}

#[test]
fn single_source_signal_gains_little() {
    let (ea, eb, folds, _) = joint_setup(21);
    let y = Target::Continuous((0..ea.rows()).map(|i| ea.at(i, 1)).collect());
    let g = joint_gain(&ea, &eb, &y, &folds, &small_forest()).unwrap();
    assert!((g.r2_joint - g.r2_a).abs() < 0.05 && g.delta.abs() < 0.02, "{g:?}");
}

#[test]
fn additive_disjoint_signal_gains() {
    let (ea, eb, folds, _) = joint_setup(22);
    let y = Target::Continuous((0..ea.rows()).map(|i| ea.at(i, 0) + eb.at(i, 0)).collect());
    let g = joint_gain(&ea, &eb, &y, &folds, &small_forest()).unwrap();
    assert!(g.delta > 0.05, "{g:?}");
    assert!((g.delta - (g.r2_joint - g.r2_a.max(g.r2_b))).abs() < 1e-15);
}

fn corpus() -> PatchCorpus {
    let world = generate_world(4, &WorldConfig::default()).unwrap();
    sample_patches(&world, &CorpusConfig::default(), 4).unwrap()
}

/// Noisy copies of the labels plus distractors, standing in for embeddings.
fn label_features(c: &PatchCorpus, seed: u64) -> Tensor {
    let mut rng = RngStream::new(seed);
    let cols: Vec<Vec<f64>> = Variable::CONTINUOUS.iter().map(|&v| c.label_column(v)).collect();
    let z: Vec<Vec<f64>> = cols
        .iter()
        .map(|col| {
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt().max(1e-12);
            col.iter().map(|v| (v - m) / s).collect()
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..c.len())
        .map(|i| {
            let mut r: Vec<f64> = z.iter().map(|col| col[i] + 0.2 * rng.normal()).collect();
            r.push(rng.normal());
            r.push(rng.normal());
            r
        })
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

#[test]
fn regions_partition_the_corpus_and_skill_is_homogeneous() {
    let c = corpus();
    let e = label_features(&c, 1);
    let extent = (c.world.rows, c.world.cols);
    let rc = RegionConfig::default();
    let members = region_members(&c.locations(), extent, &rc);
    let mut all: Vec<usize> = members.concat();
    all.sort();
    assert_eq!(all, (0..c.len()).collect::<Vec<_>>());

    let y = target_of(&c, Variable::Temperature);
    let folds = spatial_blocks(&c.locations(), extent, 4, 4, 5).unwrap();
    let cfg = small_forest();
    let global = cv_score(&e, &y, &folds, &cfg).unwrap().value;
    let regions = region_skill(&e, &y, &c.locations(), extent, &rc, &cfg).unwrap();
    let vals: Vec<f64> = regions.iter().filter_map(|r| r.value).collect();
    assert_eq!(vals.len(), 4);
    let spread = vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < global, "spread {spread} vs global {global}");
}

#[test]
fn constant_region_is_null_with_reason() {
    let locs = grid_layout(12);
    let mut rng = RngStream::new(5);
    let e = random_matrix(&mut rng, locs.len(), 2);
    // Top-left region holds a constant label.
    let y: Vec<f64> = locs.iter().map(|&(r, c)| if r < 6 && c < 6 { 1.0 } else { rng.normal() }).collect();
    let out = region_skill(
        &e,
        &Target::Continuous(y),
        &locs,
        (12, 12),
        &RegionConfig::default(),
        &small_forest(),
    )
    .unwrap();
    assert_eq!(out[0].value, None);
    assert_eq!(out[0].reason.as_deref(), Some("zero variance"));
    assert!(out[1..].iter().all(|r| r.value.is_some()));
}

#[test]
fn skill_matrix_shape_and_metric_kinds() {
    let c = corpus();
    let extent = (c.world.rows, c.world.cols);
    let folds = spatial_blocks(&c.locations(), extent, 4, 4, 5).unwrap();
    let feats: Vec<Tensor> = (0..6).map(|s| label_features(&c, 10 + s)).collect();
    let embeddings: Vec<(Source, &Tensor)> = Source::ALL.iter().cloned().zip(feats.iter()).collect();
    assert_eq!(embeddings.len(), 6);
    let cfg = RfConfig { n_trees: 10, ..RfConfig::default() };
    let m = skill_matrix(&embeddings, &c, &Variable::ALL, &folds, &cfg).unwrap();
    assert_eq!(m.entries.len(), 42);
    for e in &m.entries {
        let kind = if e.variable.is_categorical() { MetricKind::Accuracy } else { MetricKind::R2 };
        assert_eq!(e.metric, kind);
        assert!(e.value <= 1.0);
        if kind == MetricKind::Accuracy {
            assert!((0.0..=1.0).contains(&e.value));
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("skill.csv");
    m.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("variable,source,metric,value\n"));
    assert_eq!(text.lines().count(), 43);
}

#[test]
fn dictionary_ranks_the_informative_dimension() {
    let c = corpus();
    let extent = (c.world.rows, c.world.cols);
    let folds = spatial_blocks(&c.locations(), extent, 4, 4, 5).unwrap();
    let e = label_features(&c, 3);
    let dict = dimension_dictionary(
        &e,
        &c,
        &Variable::ALL,
        &folds,
        &RfConfig { n_trees: 20, ..RfConfig::default() },
        &DictionaryConfig::default(),
    )
    .unwrap();
    for (k, v) in Variable::CONTINUOUS.iter().enumerate() {
        let entries = &dict.variables[v.name()];
        assert_eq!(entries.len(), 5);
        assert_eq!(entries[0].dim, k, "{}", v.name());
        assert!(entries.iter().all(|d| d.importance >= 0.0));
        assert!(entries.iter().all(|d| d.spearman.is_some_and(|r| r.abs() <= 1.0)));
    }
    for v in [Variable::LandCover, Variable::Climate] {
        assert!(dict.variables[v.name()].iter().all(|d| d.spearman.is_none()));
    }
}

#[test]
fn accuracy_is_a_fraction() {
    assert_eq!(accuracy(&[1, 1], &[1.0, 0.0]), 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn folds_never_leak_blocks(seed in 0u64..1000, n in 20usize..120) {
        let mut rng = RngStream::new(seed);
        let locs: Vec<(usize, usize)> = (0..n).map(|_| (rng.index(64), rng.index(64))).collect();
        if let Ok(f) = spatial_blocks(&locs, (64, 64), 4, 4, 3) {
            for fold in 0..3 {
                let (train, test) = f.split(fold);
                for &a in &test {
                    prop_assert!(train.iter().all(|&b| f.blocks[b] != f.blocks[a]));
                }
            }
        }
    }
}
