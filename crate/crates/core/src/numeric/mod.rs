//! Dense tensors, tape-based reverse-mode differentiation, Adam, and
//! checkpoints. Everything runs in f64.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod param;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use layers::{lstm_step, Ctx, LayerNorm, Linear, LstmVars, LstmWeights};
pub use optim::Adam;
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{conv1d, conv_out_len, Padding, Tensor};
