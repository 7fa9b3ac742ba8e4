//! Seeded fixtures shared by the benchmarks.

use sensorfleet::jepa::model::{encoder_layout, predictor_layout};
use sensorfleet::jepa::{sample_mask, EncoderConfig, MaskPlan, ParamSet};
use sensorfleet::{RngStream, Tensor};

pub fn gaussian(seed: u64, n: usize, d: usize) -> Tensor {
    let mut rng = RngStream::new(seed);
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.normal()).collect())
}

/// 512 points in 16 separated clumps, 64-d.
pub fn clustered(seed: u64) -> Tensor {
    let mut rng = RngStream::new(seed);
    let centres = gaussian(seed + 1, 16, 64).scale(4.0);
    let rows: Vec<Vec<f64>> =
        (0..512).map(|i| centres.row(i % 16).iter().map(|c| c + 0.5 * rng.normal()).collect()).collect();
    Tensor::from_rows(&rows).expect("rows share a width")
}

/// Tiny-preset encoder on 16-pixel, 2-channel patches with fresh weights.
pub struct EncoderFixture {
    pub config: EncoderConfig,
    pub context: ParamSet,
    pub predictor: ParamSet,
    pub tokens: Vec<Tensor>,
    pub masks: Vec<MaskPlan>,
}

pub fn encoder_fixture(batch: usize, seed: u64) -> EncoderFixture {
    let config = EncoderConfig::tiny(2, 16);
    let mut rng = RngStream::new(seed);
    let context = ParamSet::init(&encoder_layout(&config), &mut rng);
    let predictor = ParamSet::init(&predictor_layout(&config), &mut rng);
    let (n, d) = (config.n_tokens(), config.token_dim());
    let tokens = (0..batch).map(|_| Tensor::matrix(n, d, (0..n * d).map(|_| rng.normal()).collect())).collect();
    let masks = (0..batch).map(|_| sample_mask(&mut rng, n, 0.6).expect("valid fraction")).collect();
    EncoderFixture { config, context, predictor, tokens, masks }
}
