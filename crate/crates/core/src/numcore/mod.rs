//! Dense `f64` tensors, tape-based reverse-mode differentiation, the
//! matrix-exponential trace and the AdamW optimizer.

pub mod adamw;
pub mod expm;
pub mod gradcheck;
pub mod nn;
pub mod tape;
pub mod tensor;

pub use adamw::{AdamWConfig, AdamWState};
pub use expm::{expm, expm_trace_value};
pub use gradcheck::{finite_diff_check, finite_diff_check_many};
pub use nn::{Activation, Bound, Linear, Mlp, ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
