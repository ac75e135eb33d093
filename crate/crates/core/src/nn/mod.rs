//! Dual-stream valence regressor.
//!
//! Stream A stacks `conv -> dropout -> relu` blocks and global-average-pools
//! the result; stream B is a bidirectional LSTM whose concatenated final
//! hidden states pass through dropout. Both are concatenated and mapped to a
//! scalar by a dense layer. Gradients are derived by hand for this fixed
//! architecture; all arithmetic is `f64`.

mod config;
mod layers;
mod lstm;
mod model;
mod optim;
mod params;
mod persist;
mod tensor;
mod train;

pub use config::ModelConfig;
pub use layers::{
    conv1d_backward, conv1d_forward, dropout_apply, global_avg_pool, relu, ConvGrads, DropoutMask,
};
pub use lstm::{bilstm_backward, bilstm_forward, lstm_direction_forward, BiLstmCache, LstmCache};
pub use model::{model_backward, model_forward, predict_from_prefix, DeterministicPrefix, ForwardCache};
pub use optim::{adam_step, adam_update, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use params::{he_normal_init, ConvParams, LstmParams, ModelParams};
pub use persist::{load_model, load_model_files, save_model, PersistError, BIN_FILE, META_FILE};
pub use tensor::Tensor;
pub use train::{
    evaluate_mse, mse_loss, train, train_observed, EpochRecord, LabeledSeries, TrainHistory,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),
    #[error("cache does not match parameters: {0}")]
    StaleCache(String),
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

pub(crate) fn shape_err(msg: impl Into<String>) -> NnError {
    NnError::ShapeMismatch(msg.into())
}
