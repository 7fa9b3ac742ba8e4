
use sensorfleet::jepa::model::shared_param_count;
use sensorfleet::jepa::*;
use sensorfleet::synthgen::*;

fn small_corpus(seed: u64, n: usize) -> PatchCorpus {
    let world = generate_world(seed, &WorldConfig { rows: 128, cols: 128, ..WorldConfig::default() }).unwrap();
    let cfg = CorpusConfig { n_patches: n, patch_px: 8, ..CorpusConfig::default() };
    sample_patches(&world, &cfg, seed).unwrap()
}

fn small_encoder(source: Source) -> EncoderConfig {
    EncoderConfig {
        image_px: 8,
        patch_px: 2,
        n_layers: 1,
        n_heads: 2,
        width: 16,
        out_dim: 8,
        predictor_width: 16,
        ..EncoderConfig::tiny(source.channels(), 8)
    }
}

fn small_train(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 2, batch_size: 8, seed, ..TrainConfig::tiny() }
}

#[test]
fn full_loss_gradient_matches_central_differences() {
    let check = sensorfleet::jepa::gradcheck::full_loss_gradient_error(11).unwrap();
    assert!(check.sampled > 10 && check.sampled < check.total);
    assert!(check.worst_relative_error <= 1e-4, "max relative error {}", check.worst_relative_error);
}

#[test]
fn same_seed_gives_bitwise_identical_checkpoints() {
    let corpus = small_corpus(2, 32);
    let src = Source::Specialist(Modality::Sar);
    let a = train(&corpus, src, &small_encoder(src), &small_train(5)).unwrap();
    let b = train(&corpus, src, &small_encoder(src), &small_train(5)).unwrap();
    assert_eq!(a, b);
    let c = train(&corpus, src, &small_encoder(src), &small_train(6)).unwrap();
    assert_ne!(a.context, c.context);
}

#[test]
fn target_follows_the_ema_recursion_exactly() {
    let corpus = small_corpus(3, 32);
    let src = Source::Specialist(Modality::Thermal);
    let enc = small_encoder(src);
    let cfg = small_train(1);
    // The initial target equals the initial context; replay the recursion.
    let init = model::ParamSet::init(&model::encoder_layout(&enc), &mut sensorfleet::RngStream::derived(1, 0));
    let mut replay = init.clone();
    let mut steps = 0;
    let ckpt = train_observed(&corpus, src, &enc, &cfg, |rec| {
        ema_update(&mut replay, rec.context, rec.momentum).unwrap();
        assert_eq!(&replay, rec.target, "step {}", rec.step);
        steps += 1;
    })
    .unwrap();
    assert_eq!(steps, 2 * 32 / 8);
    assert_eq!(replay, ckpt.target);
}

#[test]
fn embeddings_are_batch_independent_and_duplicate_stable() {
    let corpus = small_corpus(4, 16);
    let src = Source::Specialist(Modality::Optical);
    let ckpt = train(&corpus, src, &small_encoder(src), &TrainConfig { epochs: 1, ..small_train(2) }).unwrap();
    let e = embed_corpus(&ckpt, &corpus).unwrap();
    assert_eq!(e.shape(), &[16, 8]);
    assert!(e.all_finite());
    let single = ckpt.embed_image(&corpus.image(src, 7)).unwrap();
    let diff = single.iter().zip(e.row(7)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-10);
    let dup = corpus.subset(&[0, 1, 2, 2]);
    let ed = embed_corpus(&ckpt, &dup).unwrap();
    assert_eq!(ed.row(2), ed.row(3));
}

#[test]
fn checkpoint_round_trips_through_disk() {
    let corpus = small_corpus(5, 16);
    let src = Source::Generalist;
    let ckpt = train(&corpus, src, &small_encoder(src), &TrainConfig { epochs: 1, ..small_train(3) }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ckpt.save(dir.path()).unwrap();
    assert!(dir.path().join("params/context/block0.ln1.g.bin").exists());
    let header = std::fs::read_to_string(dir.path().join("params/target/pos.json")).unwrap();
    assert_eq!(header, r#"{"shape":[16,16],"dtype":"f64"}"#);
    let trace = std::fs::read_to_string(dir.path().join("loss_trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,jepa_loss,var_term,cov_term"));
    assert_eq!(Checkpoint::load(dir.path()).unwrap(), ckpt);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let corpus = small_corpus(6, 16);
    let enc = small_encoder(Source::Specialist(Modality::Sar));
    assert!(train(&corpus, Source::Specialist(Modality::Optical), &enc, &small_train(0)).is_err());
    let big_batch = TrainConfig { batch_size: 32, ..small_train(0) };
    assert!(train(&corpus, Source::Specialist(Modality::Sar), &enc, &big_batch).is_err());
}

#[test]
fn architecture_is_shared_across_the_fleet() {
    let shared: Vec<usize> =
        Source::ALL.iter().map(|s| shared_param_count(&EncoderConfig::tiny(s.channels(), 16))).collect();
    assert!(shared.windows(2).all(|w| w[0] == w[1]));
    assert!(Source::ALL.iter().all(|s| EncoderConfig::tiny(s.channels(), 16).out_dim == 64));
}
