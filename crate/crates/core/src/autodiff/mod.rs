//! Minimal reverse-mode differentiation: enough to train the backbone, the
//! hypernetwork with its generated head, and the fusion baselines.

mod gradcheck;
mod linalg;
mod optim;
mod session;
mod tape;
mod tensor;

pub use gradcheck::{analytic_grads, gradient_check, max_rel_error};
pub use linalg::{matmul, matmul_a_bt, matmul_at_b};
pub use optim::{AdamConfig, Param, ParamId, ParamStore};
pub use session::Session;
pub use tape::{Activation, Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};
