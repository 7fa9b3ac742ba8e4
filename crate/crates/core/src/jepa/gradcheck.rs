//! Finite-difference check of the full training loss.

use std::sync::Arc;

use super::mask::{sample_mask, MaskPlan};
use super::model::{encoder_layout, predictor_layout, ParamSet};
use super::train::batch_gradients;
use super::{EncoderConfig, TrainConfig};
use crate::error::Result;
use crate::ndcore::{RngStream, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub worst_relative_error: f64,
    pub sampled: usize,
    pub total: usize,
}

/// Width-8, single-layer encoder on 8×8 two-channel images.
pub fn grad_check_config() -> EncoderConfig {
    EncoderConfig {
        image_px: 8,
        channels: 2,
        patch_px: 2,
        n_layers: 1,
        n_heads: 2,
        width: 8,
        mlp_ratio: 2,
        out_dim: 4,
        predictor_depth: 2,
        predictor_width: 8,
    }
}

/// Largest relative error between the analytic gradient of the full batch
/// loss and central differences over a seeded 5% sample of coordinates.
pub fn full_loss_gradient_error(seed: u64) -> Result<GradCheck> {
    let enc = grad_check_config();
    let cfg = TrainConfig { seed, ..TrainConfig::tiny() };
    let mut rng = RngStream::new(seed);
    let context = ParamSet::init(&encoder_layout(&enc), &mut rng);
    let mut target = context.clone();
    // Move the target away from the context so the latent targets are informative.
    for t in target.tensors.iter_mut() {
        *t = Arc::new(t.map(|v| v + 0.05 * v.signum()));
    }
    let predictor = ParamSet::init(&predictor_layout(&enc), &mut rng);
    let b = 4;
    let toks: Vec<Tensor> = (0..b)
        .map(|_| {
            let n = enc.n_tokens() * enc.token_dim();
            Tensor::matrix(enc.n_tokens(), enc.token_dim(), (0..n).map(|_| rng.normal()).collect())
        })
        .collect();
    let masks: Vec<MaskPlan> = (0..b).map(|_| sample_mask(&mut rng, enc.n_tokens(), 0.6)).collect::<Result<_>>()?;
    let refs: Vec<&Tensor> = toks.iter().collect();
    let loss = |c: &ParamSet, p: &ParamSet| batch_gradients(&enc, &cfg, c, &target, p, &refs, &masks).map(|g| g.total);
    let analytic = batch_gradients(&enc, &cfg, &context, &target, &predictor, &refs, &masks)?.grads;

    let mut coords = Vec::new();
    for (pi, g) in analytic.iter().enumerate() {
        for k in 0..g.len() {
            coords.push((pi, k));
        }
    }
    let n_sample = (coords.len() as f64 * 0.05).ceil() as usize;
    let picks = rng.sample_without_replacement(coords.len(), n_sample);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for &c in &picks {
        let (pi, k) = coords[c];
        let shifted = |delta: f64| {
            let (mut cc, mut pp) = (context.clone(), predictor.clone());
            let set = if pi < cc.len() { &mut cc } else { &mut pp };
            let idx = if pi < context.len() { pi } else { pi - context.len() };
            let mut t = (*set.tensors[idx]).clone();
            t.data_mut()[k] += delta;
            set.tensors[idx] = Arc::new(t);
            loss(&cc, &pp)
        };
        let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
        let an = analytic[pi].data()[k];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(GradCheck { worst_relative_error: worst, sampled: n_sample, total: coords.len() })
}
