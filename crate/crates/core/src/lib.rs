//! Neural implicit dictionaries.
//!
//! A dictionary is a set of coordinate networks (experts) sharing a
//! sinusoidal trunk. Every signal in a collection is represented as a
//! k-sparse linear combination of the experts; the combination weights are
//! the gating state of a mixture-of-experts layer. Once a dictionary is
//! trained, an unseen signal is fitted by optimizing only its sparse code.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. File formats, timing and the command line live in the `nid`
//! companion crate.
//!
//! Layout:
//! - [`diff`]: tensors on a tape with reverse-mode gradients, Adam/SGD and a
//!   finite-difference oracle.
//! - [`coordnet`]: positional embedding, trunk and expert heads.
//! - [`nid`]: the dictionary, gating, top-k sparsification and penalties.
//! - [`measure`]: measurement functionals (pixels, Radon rays, SDF samples).
//! - [`data`]: seeded generators for phantoms, blob images, polygons, videos.
//! - [`metrics`]: PSNR, SSIM, Chamfer distance, normal consistency.
//! - [`tasks`]: training, code adaptation and the downstream pipelines.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
pub(crate) mod prelude;

pub mod coordnet;
pub mod data;
pub mod diff;
pub mod measure;
pub mod metrics;
pub mod nid;
pub mod rng;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
