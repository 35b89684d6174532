//! Reverse-mode differentiation over a fixed operation set.

mod check;
mod optim;
mod params;
mod tape;

pub use check::finite_diff_check;
pub use optim::{AdamState, Optimizer, Sgd};
pub use params::ParamStore;
pub use tape::{affine_forward, loss_l1, loss_l2, sine_forward, Gradients, Tape, Var};

pub(crate) use tape::cv_of;
