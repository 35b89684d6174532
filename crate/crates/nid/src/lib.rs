//! File formats, checkpoints and the command line around `nid-core`.
//!
//! Images are binary PGM/PPM, sinograms and point samples are CSV, trained
//! models are `NIDC` checkpoints and task configs are flat JSON objects.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod csv_io;
pub mod error;
pub mod image_io;

pub use error::{IoError, Result};
