//! Minimal dense-tensor substrate with tape-based reverse-mode gradients.
//!
//! Everything is row-major `f64`. A [`Tape`] records the forward pass as a
//! linear sequence of nodes; [`Tape::backward`] replays it in reverse and
//! accumulates gradients exactly once per node. The op vocabulary is fixed to
//! what the attention/detection pipeline needs — there is no broadcasting
//! beyond the few explicit row/bias forms, and no graph rewriting.
//!
//! Every differentiable op here is verified against central finite
//! differences by the [`gradcheck`] harness (see the crate's test suite).

mod error;
pub mod gradcheck;
mod loss;
mod ops;
mod spatial;
mod tape;
mod tensor;

pub use error::{NumericError, Result};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use ops::{concat_cols, concat_rows};
pub use spatial::{concat_channels, upsample2x_axis_weights, SampleMode};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
