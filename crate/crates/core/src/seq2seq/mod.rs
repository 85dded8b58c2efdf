//! GRU encoder-decoder trained to reconstruct sensor windows.

mod checkpoint;
mod gradcheck;
mod gru;
mod model;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};
pub use gru::{dropout_mask, gru_step, GruLayerParams};
pub use model::{Embedding, LossKind, ModelConfig, OutputOrder, Seq2SeqModel, Seq2SeqParams};
pub use train::{batch_loss_and_grad, mean_loss, train, Optimizer, TrainConfig, TrainHistory};
