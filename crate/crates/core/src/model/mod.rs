//! Source-context encoder with a copy-attention tuple decoder.
//!
//! Parameters live in a [`ModelParams`] store; the forward pass is recorded
//! on a small reverse-mode autodiff tape in 64-bit floats, which keeps
//! finite-difference gradient checks meaningful.

pub mod beam;
pub mod config;
mod graph;
pub mod network;
mod params;
mod tensor;
pub mod train;
pub mod vocab;

pub use beam::{beam_extract, beam_search, predict_documents, BeamOutput, Hypothesis};
pub use config::{ModelConfig, TrainConfig};
pub use network::{
    decode_step, decoder_memory, embed_inputs, encode, encode_bottom, encode_top, forward_loss,
    forward_loss_with, initial_state, loss_and_gradients, surface_distribution,
    teacher_forced_accuracy, DecoderMemory, DecoderState, EncoderStates, LossOutput, StepOutput,
};
pub use params::{ModelParams, ParamGroup};
pub use tensor::Tensor;
pub use train::{
    grad_check, grad_check_with, numerical_gradient, relative_error, train, EpochLog, GradCheck,
    TrainReport,
};
pub use vocab::Vocab;
