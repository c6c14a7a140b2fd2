//! Layout-aware transformer encoder with MLM, BIO and SPADE heads.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod loss;
pub mod params;
pub mod targets;
pub mod train;

pub use checkpoint::{select_checkpoint, Checkpoint, OptimizerState};
pub use config::{
    bio_begin, bio_inside, Criterion, EncoderConfig, TaskKind, TrainConfig, BIO_LABELS, BIO_O,
    VISUAL_DIM,
};
pub use forward::{backward, forward, visual_features, DocInputs, Forward};
pub use loss::{argmax_rows, loss_and_grad, token_loss};
pub use params::{Params, Scalar, Tensor};
pub use targets::{make_targets, spade_none, Targets};
pub use train::{evaluate, train, train_with, Evaluation, Trainer};
