//! The mixture-of-experts dictionary layer.

mod dictionary;
mod gating;
mod patch;
mod penalty;
pub mod sparse;

pub use dictionary::{patch_prefix, Dictionary};
pub use gating::{gating_mode, Gate, GateInput, GateKind, GatingMode, TABLE};
pub use patch::{Dispatch, PatchGrid};
pub use penalty::{
    cv_penalty, l1_penalty, utilization, video_penalty, video_weights, CV_EPS,
};
pub use sparse::{abs_top_k, hard_threshold, sparsify, SparseCode};
