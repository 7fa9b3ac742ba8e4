//! Shared encoder architecture and masked-latent pretraining.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod loss;
pub mod mask;
pub mod model;
pub mod tokens;
pub mod train;

pub use config::{EncoderConfig, TrainConfig};
pub use loss::{ema_update, jepa_loss, vicreg, VicregWeights};
pub use mask::{sample_mask, visible_count, MaskPlan};
pub use model::{encode_tensors, ParamSet};
pub use tokens::{patchify, unpatchify};
pub use train::{
    batch_gradients, embed_corpus, tokens_for, train, train_observed, BatchGradients, Checkpoint, EpochLoss, Normalizer,
    StepRecord,
};
