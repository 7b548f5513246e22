//! A small trainable embedding network with per-layer losses, its SGD
//! trainer, a synthetic shape dataset, and PCA visualization.

pub mod checkpoint;
pub mod layers;
mod model;
pub mod pca;
pub mod synth;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use model::{backward, forward, EmbeddingModel, Forward, DEFAULT_EMBED_DIM, TAP_CHANNELS};
pub use pca::{pca_fit, pca_project, pca_visualize, Pca};
pub use synth::{synth_dataset, Sample};
pub use train::{
    evaluate, evaluate_loss, loss_and_grads, train, train_step, History, StepLoss, TrainConfig, TrainState,
};
