//! Pretraining loop: masked latent prediction plus VICReg on pooled context
//! embeddings, momentum gradient descent and an EMA target encoder.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EncoderConfig, TrainConfig};
use super::loss::{ema_update, jepa_loss_graph, vicreg_graph, VicregWeights};
use super::mask::{sample_mask, MaskPlan};
use super::model::{encode, encode_tensors, encoder_layout, predict, predictor_layout, ParamSet};
use super::tokens::patchify;
use crate::error::{Error, Result};
use crate::ndcore::{Graph, RngStream, Tensor, Var};
use crate::synthgen::{PatchCorpus, Source};

/// Per-channel standardisation fitted on the training corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(corpus: &PatchCorpus, source: Source) -> Self {
        let c = source.channels();
        let s2 = corpus.patch_px() * corpus.patch_px();
        let (mut sum, mut sq) = (vec![0.0; c], vec![0.0; c]);
        for i in 0..corpus.len() {
            let img = corpus.image(source, i);
            for ch in 0..c {
                for &v in &img.data()[ch * s2..(ch + 1) * s2] {
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        let n = (corpus.len() * s2) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let sd = (q / n - m * m).max(0.0).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, image: &Tensor) -> Tensor {
        let c = self.mean.len();
        let per = image.len() / c;
        let mut out = image.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let ch = k / per;
            *v = (*v - self.mean[ch]) / self.std[ch];
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub jepa: f64,
    pub var: f64,
    pub cov: f64,
}

impl EpochLoss {
    pub fn total(&self, cfg: &TrainConfig) -> f64 {
        self.jepa + cfg.lambda_var * self.var + cfg.lambda_cov * self.cov
    }
}

/// A trained encoder with its EMA target, predictor and training record.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub source: Source,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub normalizer: Normalizer,
    pub context: ParamSet,
    pub target: ParamSet,
    pub predictor: ParamSet,
    pub loss_trace: Vec<EpochLoss>,
}

/// State visible to a training observer after each update.
pub struct StepRecord<'a> {
    pub step: usize,
    pub momentum: f64,
    pub loss: f64,
    pub context: &'a ParamSet,
    pub target: &'a ParamSet,
}

pub fn tokens_for(corpus: &PatchCorpus, source: Source, enc: &EncoderConfig, norm: &Normalizer, i: usize) -> Result<Tensor> {
    patchify(&norm.apply(&corpus.image(source, i)), enc.patch_px)
}

fn check_inputs(corpus: &PatchCorpus, source: Source, enc: &EncoderConfig) -> Result<()> {
    enc.validate()?;
    if enc.channels != source.channels() {
        return Err(Error::invalid(format!(
            "encoder expects {} channels but {} has {}",
            enc.channels,
            source.name(),
            source.channels()
        )));
    }
    if enc.image_px != corpus.patch_px() {
        return Err(Error::invalid(format!(
            "encoder expects {}px images but the corpus has {}px patches",
            enc.image_px,
            corpus.patch_px()
        )));
    }
    Ok(())
}

struct SampleGraph {
    graph: Graph,
    jepa: Var,
    pooled: Var,
}

fn sample_forward(
    enc: &EncoderConfig,
    context: &ParamSet,
    predictor: &ParamSet,
    tokens: &Tensor,
    target_latents: &Tensor,
    mask: &MaskPlan,
    batch: usize,
) -> SampleGraph {
    let mut g = Graph::new();
    let cv = context.bind(&mut g, 0);
    let pv = predictor.bind(&mut g, context.len());
    let x = g.constant(tokens.select_rows(&mask.context));
    let (lat, pooled) = encode(&mut g, enc, &cv, x, &mask.context);
    let pred = predict(&mut g, enc, &pv, lat, &mask.target);
    let tgt = g.constant(target_latents.select_rows(&mask.target));
    let mse = jepa_loss_graph(&mut g, pred, tgt);
    let jepa = g.scale(mse, 1.0 / batch as f64);
    SampleGraph { graph: g, jepa, pooled }
}

/// Loss terms of one batch and the gradient of the total loss with respect
/// to every context-encoder then predictor parameter.
#[derive(Debug)]
pub struct BatchGradients {
    pub jepa: f64,
    pub var: f64,
    pub cov: f64,
    pub total: f64,
    pub grads: Vec<Tensor>,
}

/// Total loss of one batch, one mask per token matrix, and its gradient.
pub fn batch_gradients(
    enc: &EncoderConfig,
    cfg: &TrainConfig,
    context: &ParamSet,
    target: &ParamSet,
    predictor: &ParamSet,
    tokens: &[&Tensor],
    masks: &[MaskPlan],
) -> Result<BatchGradients> {
    let b = tokens.len();
    if masks.len() != b {
        return Err(Error::invalid(format!("{} masks for a batch of {b}", masks.len())));
    }
    let all: Vec<usize> = (0..enc.n_tokens()).collect();
    let samples: Vec<SampleGraph> = tokens
        .par_iter()
        .zip(masks.par_iter())
        .map(|(t, m)| {
            let (tl, _) = encode_tensors(enc, target, t, &all)?;
            Ok(sample_forward(enc, context, predictor, t, &tl, m, b))
        })
        .collect::<Result<_>>()?;

    let mut zg = Graph::new();
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.graph.value(s.pooled).data().to_vec()).collect();
    let z = zg.input(Tensor::from_rows(&rows)?);
    let weights = VicregWeights { gamma: cfg.vicreg_gamma, lambda_var: cfg.lambda_var, lambda_cov: cfg.lambda_cov };
    let terms = vicreg_graph(&mut zg, z, weights)?;
    let dz = zg.backward_scalar(terms.total).of(z).cloned().expect("vicreg depends on its batch");

    let n_params = context.len() + predictor.len();
    let per_sample: Vec<Vec<Option<Tensor>>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let seeds = [(s.jepa, Tensor::scalar(1.0)), (s.pooled, Tensor::matrix(1, dz.cols(), dz.row(i).to_vec()))];
            let grads = s.graph.backward(&seeds);
            s.graph.param_grads(&grads, n_params)
        })
        .collect();

    let shapes = context.tensors.iter().chain(&predictor.tensors);
    let mut grads: Vec<Tensor> = shapes.map(|t| Tensor::zeros(t.shape())).collect();
    for sample in per_sample {
        for (acc, g) in grads.iter_mut().zip(sample) {
            if let Some(g) = g {
                acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, v)| *a += v);
            }
        }
    }
    let jepa: f64 = samples.iter().map(|s| s.graph.scalar(s.jepa)).sum();
    let total = jepa + zg.scalar(terms.total);
    Ok(BatchGradients { jepa, var: zg.scalar(terms.variance), cov: zg.scalar(terms.covariance), total, grads })
}

fn momentum_update(params: &mut ParamSet, velocity: &mut [Tensor], grads: &[Tensor], lr: f64, mu: f64) {
    for ((p, v), g) in params.tensors.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        let mut next = (**p).clone();
        for ((w, vel), &gr) in next.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vel = mu * *vel + gr;
            *w -= lr * *vel;
        }
        *p = Arc::new(next);
    }
}

pub fn train(corpus: &PatchCorpus, source: Source, enc: &EncoderConfig, cfg: &TrainConfig) -> Result<Checkpoint> {
    train_observed(corpus, source, enc, cfg, |_| {})
}

/// [`train`] with a callback after every parameter update.
pub fn train_observed(
    corpus: &PatchCorpus,
    source: Source,
    enc: &EncoderConfig,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&StepRecord),
) -> Result<Checkpoint> {
    check_inputs(corpus, source, enc)?;
    cfg.validate()?;
    if cfg.batch_size > corpus.len() {
        return Err(Error::invalid(format!(
            "batch_size {} exceeds the corpus size {}",
            cfg.batch_size,
            corpus.len()
        )));
    }
    let normalizer = Normalizer::fit(corpus, source);
    let tokens: Vec<Tensor> = (0..corpus.len())
        .into_par_iter()
        .map(|i| tokens_for(corpus, source, enc, &normalizer, i))
        .collect::<Result<_>>()?;

    let mut context = ParamSet::init(&encoder_layout(enc), &mut RngStream::derived(cfg.seed, 0));
    let mut predictor = ParamSet::init(&predictor_layout(enc), &mut RngStream::derived(cfg.seed, 1));
    let mut target = context.clone();
    let mut rng = RngStream::derived(cfg.seed, 2);
    let zeros = |s: &ParamSet| -> Vec<Tensor> { s.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect() };
    let (mut vel_c, mut vel_p) = (zeros(&context), zeros(&predictor));

    let steps_per_epoch = corpus.len() / cfg.batch_size;
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = rng.permutation(corpus.len());
        let mut sums = [0.0; 3];
        for chunk in order.chunks_exact(cfg.batch_size) {
            let masks: Vec<MaskPlan> = chunk
                .iter()
                .map(|_| sample_mask(&mut rng, enc.n_tokens(), cfg.visible_frac))
                .collect::<Result<_>>()?;
            let batch: Vec<&Tensor> = chunk.iter().map(|&i| &tokens[i]).collect();
            let out = batch_gradients(enc, cfg, &context, &target, &predictor, &batch, &masks)?;
            if !out.total.is_finite() {
                return Err(Error::Divergence { step, loss: out.total });
            }
            let (gc, gp) = out.grads.split_at(context.len());
            momentum_update(&mut context, &mut vel_c, gc, cfg.learning_rate, cfg.momentum);
            momentum_update(&mut predictor, &mut vel_p, gp, cfg.learning_rate, cfg.momentum);
            if !context.all_finite() || !predictor.all_finite() {
                return Err(Error::Divergence { step, loss: out.total });
            }
            let m = cfg.ema_at(step, total_steps);
            ema_update(&mut target, &context, m)?;
            observer(&StepRecord { step, momentum: m, loss: out.total, context: &context, target: &target });
            sums[0] += out.jepa;
            sums[1] += out.var;
            sums[2] += out.cov;
            step += 1;
        }
        let k = steps_per_epoch as f64;
        let rec = EpochLoss { epoch, jepa: sums[0] / k, var: sums[1] / k, cov: sums[2] / k };
        log::debug!("{} epoch {epoch}: total {:.5}", source.name(), rec.total(cfg));
        trace.push(rec);
    }
    Ok(Checkpoint {
        source,
        encoder: enc.clone(),
        train: cfg.clone(),
        normalizer,
        context,
        target,
        predictor,
        loss_trace: trace,
    })
}

impl Checkpoint {
    /// Pooled target-encoder embedding of one `C × S × S` image.
    pub fn embed_image(&self, image: &Tensor) -> Result<Vec<f64>> {
        if image.shape() != [self.encoder.channels, self.encoder.image_px, self.encoder.image_px] {
            return Err(Error::Shape {
                context: "embed_image",
                expected: vec![self.encoder.channels, self.encoder.image_px, self.encoder.image_px],
                actual: image.shape().to_vec(),
            });
        }
        let tokens = patchify(&self.normalizer.apply(image), self.encoder.patch_px)?;
        let all: Vec<usize> = (0..self.encoder.n_tokens()).collect();
        let (_, pooled) = encode_tensors(&self.encoder, &self.target, &tokens, &all)?;
        Ok(pooled.into_data())
    }
}

/// `n × out_dim` matrix of target-encoder embeddings of every patch.
pub fn embed_corpus(ckpt: &Checkpoint, corpus: &PatchCorpus) -> Result<Tensor> {
    check_inputs(corpus, ckpt.source, &ckpt.encoder)?;
    let rows: Vec<Vec<f64>> = (0..corpus.len())
        .into_par_iter()
        .map(|i| ckpt.embed_image(&corpus.image(ckpt.source, i)))
        .collect::<Result<_>>()?;
    Tensor::from_rows(&rows)
}
