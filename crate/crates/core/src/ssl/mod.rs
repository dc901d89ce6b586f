//! Pretext tasks: masked reconstruction, contrastive view matching,
//! self-distillation and the plain autoencoder baseline.

mod augment;
mod dino;
mod loss;
mod mask;
mod pretrain;

pub use augment::{augment, augment_views, circular_shift, AugmentSpec};
pub use dino::{dino_loss, dino_step, teacher_probs, DinoConfig, DinoModel, DinoState};
pub use loss::{batch_contrastive_loss, contrastive_loss, LossKind, LossParams, NORM_TOL};
pub use mask::{mask_rows, MaskSpec};
pub use pretrain::{
    epoch_means, pretrain_autoencoder, pretrain_contrastive, pretrain_dino, pretrain_masked, read_loss_log,
    write_loss_log, LossRecord, Method, PretrainConfig, PretrainOutput, DECODER_PREFIX, DEFAULT_MASK_SIZE,
    DINO_HEAD_PREFIX, LOSS_LOG_HEADER, PROJECTOR_PREFIX,
};
