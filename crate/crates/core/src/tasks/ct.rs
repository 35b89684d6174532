use core::f64::consts::PI;

use crate::measure::{sinogram, Field, MeasurementSet};
use crate::nid::SparseCode;
use crate::prelude::*;
use crate::tasks::adapt::{adapt_code, AdaptResult, CodeInit};
use crate::tasks::config::{LossKind, TaskConfig};
use crate::tasks::model::{Block, Functional, TrainedModel};
use crate::{Error, Result, Tensor};

/// `views` projection angles evenly spaced over `[0, π)`.
pub fn ct_views(views: usize) -> Vec<f64> {
    (0..views).map(|v| PI * v as f64 / views as f64).collect()
}

/// `count` detector offsets at bin centres across `[-1, 1]`.
pub fn ct_offsets(count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| -1.0 + (2 * i + 1) as f64 / count as f64)
        .collect()
}

/// Parallel-beam projections: `values[a][o]` integrates along angle
/// `angles[a]` at offset `offsets[o]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub angles: Vec<f64>,
    pub offsets: Vec<f64>,
    pub values: Tensor,
}

impl Sinogram {
    /// Projects `f` with `q` quadrature nodes per ray.
    pub fn simulate(f: &dyn Field, angles: &[f64], offsets: &[f64], q: usize) -> Result<Self> {
        Ok(Self {
            angles: angles.to_vec(),
            offsets: offsets.to_vec(),
            values: sinogram(f, angles, offsets, q)?,
        })
    }

    pub fn rays(&self) -> usize {
        self.angles.len() * self.offsets.len()
    }

    /// One measurement per ray with `ω = (r, φ)`.
    pub fn to_measurements(&self, id: usize) -> Result<MeasurementSet> {
        if self.rays() == 0 {
            return Err(Error::Empty("sinogram"));
        }
        let mut omega = Vec::with_capacity(2 * self.rays());
        for &phi in &self.angles {
            for &r in &self.offsets {
                omega.push(r);
                omega.push(phi);
            }
        }
        MeasurementSet::new(
            id,
            Tensor::new(vec![self.rays(), 2], omega)?,
            self.values.clone().reshape(&[self.rays(), 1])?,
        )
    }
}

#[derive(Clone, Debug)]
pub struct CtReconstruction {
    pub code: SparseCode,
    pub losses: Vec<f64>,
}

/// Fits a code whose field reproduces the sinogram under the ray
/// functional with an ℓ2 loss.
pub fn ct_reconstruct(
    model: &TrainedModel,
    sino: &Sinogram,
    init: &CodeInit,
    cfg: &TaskConfig,
) -> Result<CtReconstruction> {
    let set = sino.to_measurements(0)?;
    let block = Block::new(&set, Functional::Rays { q: cfg.quadrature }, LossKind::L2);
    let AdaptResult { code, losses, .. } = adapt_code(model, &[block], init, cfg)?;
    Ok(CtReconstruction { code, losses })
}
