//! Encoder architectures and contrastive pre-training.

pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod pretrain;
pub mod state;

pub use checkpoint::{write_atomic, EncoderCheckpoint};
pub use loss::{moco_loss, moco_loss_with_grad, simclr_loss, simclr_loss_with_grad};
pub use model::{Architecture, EncoderModel, EncoderSpec};
pub use pretrain::{
    load_split_images, pretrain_encoder, pretrain_on_images, write_loss_log, Algorithm, EpochLoss, MocoConfig,
    PretrainConfig, PretrainOutcome, SimclrConfig,
};
pub use state::{momentum_update, queue_update, KeyQueue, MoCoState, SimCLRState};
