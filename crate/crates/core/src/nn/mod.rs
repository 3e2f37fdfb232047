//! Dense recurrent kernel.
//!
//! A hidden layer computes `h_t = φ(x_t W_xh + h_{t-1} W_hh + b_h)` with row
//! vectors throughout; layers stack by feeding `h_t` of one layer as the input
//! of the next, and a linear head produces logits from the top layer.
//! Gradients are exact for the summed per-step loss over a truncated window;
//! the hidden state entering the window is a constant.

mod cell;
mod gradcheck;
mod matrix;
mod online;
mod stack;

pub use cell::{
    cell_forward, head_forward, sigmoid, sigmoid_bce, softmax, softmax_xent, Activation, OutputHead, RnnLayerParams,
};
pub use gradcheck::{check_stack, grad_check, GradCheckReport, WindowStep};
pub use matrix::Matrix;
pub use online::TbpttLearner;
pub use stack::{
    apply_sgd, sgd_step, FreezeMask, HiddenCarry, OutputKind, RnnStack, StackGrads, TrainConfig, UnrolledTape,
};
