//! Variational sequence model over feature-token sequences: a transformer
//! encoder maps a sequence to a latent Gaussian, a transformer decoder
//! reconstructs the sequence from a latent point, and a small feed-forward
//! evaluator regresses the subset's utility from the same point.

mod checkpoint;
mod model;
pub mod tape;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint, Tensor, TrainingMeta, FORMAT_VERSION};
pub use model::{kl_term, reparameterize, Example, Hyperparams, LatentDistribution, LatentPoint, LossParts, SubsetVae};
pub use train::{augment, evaluator_mse, train, train_model, train_model_with, Trained};
