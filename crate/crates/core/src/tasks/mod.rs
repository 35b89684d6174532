//! Training, code adaptation and the downstream pipelines.
//!
//! Observations are [`Block`]s: measurement parameters, measured values, the
//! functional that links a field to them and the loss that compares them.
//! A dictionary is trained jointly with per-instance gates on a corpus and
//! then frozen; unseen instances are fitted by optimizing their code alone.

mod adapt;
mod baseline;
mod config;
mod ct;
mod inpaint;
mod model;
mod sdf;
mod train;
mod video;

pub use adapt::{adapt_code, adapt_with_response, AdaptResult, AtomResponse, CodeInit};
pub use baseline::{baseline_fit, BaselineModel};
pub use config::{LossKind, OptimizerKind, SolverKind, TaskConfig};
pub use ct::{ct_offsets, ct_reconstruct, ct_views, CtReconstruction, Sinogram};
pub use inpaint::{inpaint, Inpainting};
pub use model::{sparsify_groups, Block, CodedField, EpochLog, Functional, TrainedModel};
pub use sdf::{sdf_blocks, sdf_fit, zero_level_set, SdfFit};
pub use train::{fit_encoder, train_dictionary, TrainHooks};
pub use video::{video_decompose, TemporalCodeNet, VideoDecomposition};
