//! Minimal from-scratch neural toolkit: matrices, embeddings, an LSTM cell
//! with analytic gradients, losses, SGD with gradient clipping, a
//! finite-difference gradient checker, and a seeded PRNG.
//!
//! Everything is 64-bit floats and single-threaded. The models in this
//! project are desk-scale, and f64 keeps gradient checks tight and training
//! bit-reproducible. Trained parameter containers are immutable values and
//! may be shared across threads freely.

pub mod embedding;
pub mod gradcheck;
pub mod layers;
pub mod lstm;
pub mod matrix;
pub mod rng;
pub mod serialize;
pub mod sgd;

pub use embedding::{EmbeddingGrads, EmbeddingTable};
pub use gradcheck::grad_check;
pub use layers::{
    affine, affine_backward, bce_loss, dropout_mask, log_softmax, sigmoid, softmax, softmax_xent,
    xent_loss,
};
pub use lstm::{lstm_backward, lstm_forward, lstm_step, LstmBackward, LstmParams, LstmTrace};
pub use matrix::Matrix;
pub use rng::Rng;
pub use serialize::{ModelFile, TensorShape, MODEL_FORMAT};
pub use sgd::{global_norm, sgd_step};

use thiserror::Error;

/// Errors from the neural toolkit.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error("model file error: {0}")]
    Model(String),
    #[error("training error: {0}")]
    Training(String),
}
