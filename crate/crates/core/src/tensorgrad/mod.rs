//! Minimal reverse-mode differentiation over 64-bit float tensors.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! replays it in reverse. Parameters live outside the tape as [`Tensor`]s and
//! are bound per step with [`Tape::param`].

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{softmax_in_place as softmax_row, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
pub(crate) mod fd;
