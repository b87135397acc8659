//! Reverse-mode differentiable matrix numerics.
//!
//! The crate provides exactly what the temporal graph models need: a
//! recording [`Tape`] over dense [`Tensor`]s, named trainable parameters,
//! an Adam optimizer and a finite-difference gradient checker.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod param;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use error::{NumError, Result};
pub use gradcheck::{check_primitive, grad_check, GradCheckReport, PRIMITIVES};
pub use param::{Bound, Param, ParamId, ParamSet};
pub use tape::{logsumexp_slice, sigmoid, Tape, Var};
pub use tensor::{Real, Tensor};
