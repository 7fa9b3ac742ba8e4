use sensorfleet::ndcore::stats::spearman;
use sensorfleet::synthgen::*;

fn default_corpus(seed: u64) -> (LatentWorld, PatchCorpus) {
    let world = generate_world(seed, &WorldConfig::default()).unwrap();
    let corpus = sample_patches(&world, &CorpusConfig::default(), seed).unwrap();
    (world, corpus)
}

#[test]
fn temperature_falls_with_elevation_over_grid() {
    let world = generate_world(5, &WorldConfig::default()).unwrap();
    let rho = spearman(world.field(Field::Elevation), world.field(Field::Temperature)).unwrap();
    assert!(rho < -0.3, "rho = {rho}");
}

#[test]
fn land_cover_is_non_degenerate_at_defaults() {
    for seed in [1, 2, 3] {
        let (_, corpus) = default_corpus(seed);
        let mut counts = [0usize; LAND_COVER_CLASSES];
        for l in &corpus.labels {
            counts[l.land_cover as usize] += 1;
        }
        let n = corpus.len() as f64;
        let big = counts.iter().filter(|&&c| c as f64 >= 0.05 * n).count();
        assert!(big >= 4, "seed {seed}: {counts:?}");
    }
}

#[test]
fn thermal_day_tracks_elevation_inversely() {
    let (_, corpus) = default_corpus(1);
    let s = corpus.patch_px();
    let therm = corpus.images(Modality::Thermal);
    let day: Vec<f64> = (0..corpus.len())
        .map(|i| {
            let base = i * 2 * s * s;
            therm.data()[base..base + s * s].iter().sum::<f64>() / (s * s) as f64
        })
        .collect();
    let rho = spearman(&day, &corpus.label_column(Variable::Elevation)).unwrap();
    assert!(rho < -0.5, "rho = {rho}");
}

#[test]
fn sar_speckle_exceeds_thermal_variance() {
    let (_, corpus) = default_corpus(1);
    let s2 = corpus.patch_px() * corpus.patch_px();
    let per_patch_var = |m: Modality| -> f64 {
        let t = corpus.images(m);
        let c = m.channels();
        let mut total = 0.0;
        for i in 0..corpus.len() {
            for ch in 0..c {
                let base = (i * c + ch) * s2;
                total += sensorfleet::ndcore::stats::variance(&t.data()[base..base + s2]);
            }
        }
        total / (corpus.len() * c) as f64
    };
    let (sar, thermal) = (per_patch_var(Modality::Sar), per_patch_var(Modality::Thermal));
    assert!(sar > thermal, "sar {sar} thermal {thermal}");
}

#[test]
fn verification_pass_recomputes_labels() {
    let (world, corpus) = default_corpus(4);
    corpus.verify_labels(&world).unwrap();
    for (p, l) in corpus.patches.iter().zip(&corpus.labels) {
        let (r, c) = p.location;
        let expect = world.get(Field::Precipitation, r, c) / world.get(Field::Pet, r, c);
        assert_eq!(l.aridity, expect);
    }
}

#[test]
fn manifest_records_relations_and_rules() {
    let (_, corpus) = default_corpus(1);
    let m = serde_json::to_value(corpus.manifest()).unwrap();
    assert!(m["field_relations"].as_array().unwrap().iter().any(|r| r.as_str().unwrap().contains("0.0065")));
    assert_eq!(m["class_rules"].as_array().unwrap().len(), 7);
    assert_eq!(m["channels"]["phenology"], 40);
}
