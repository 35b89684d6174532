use serde::{Deserialize, Serialize};

use crate::coordnet::Architecture;
use crate::nid::{GateKind, PatchGrid};
use crate::prelude::*;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Code optimizer used by adaptation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// Adam on the column-normalized code, hard-thresholded every step.
    Adam,
    /// Gradient descent on the column-normalized code with the step size
    /// recomputed on the current support every step (normalized iterative
    /// hard thresholding).
    Niht,
}

/// Every hyperparameter of training, adaptation and the pipelines.
///
/// Serialized as one flat JSON object; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub seed: u64,

    // dictionary
    pub n: usize,
    pub k: usize,
    pub n_freq: usize,
    pub width: usize,
    pub layers: usize,
    pub head_width: usize,
    pub omega0: f64,
    pub patch_counts: Vec<usize>,
    pub patch_overlap: f64,

    // gating
    pub gating: GateKind,
    pub encoder_hidden: Vec<usize>,
    /// Average-pooling factor that turns an image into an encoder summary.
    pub encoder_pool: usize,
    /// Epochs of [`fit_encoder`](crate::tasks::fit_encoder) after training.
    pub encoder_epochs: usize,
    pub lr_encoder: f64,
    pub gate_noise: f64,

    // training
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    /// Coordinates sampled per step; 0 uses all of them.
    pub coord_batch: usize,
    pub lambda: f64,
    pub l1_scale: f64,
    pub cv_scale: f64,
    pub cv_abs: bool,
    pub optimizer: OptimizerKind,
    pub lr_dict: f64,
    pub lr_gate: f64,
    /// Learning rates decay geometrically to this fraction by the last epoch.
    pub lr_final_fraction: f64,
    pub loss: LossKind,

    // adaptation
    pub adapt_steps: usize,
    pub adapt_solver: SolverKind,
    pub lr_adapt: f64,
    pub adapt_k: Option<usize>,
    pub init_noise: f64,

    // baseline
    pub baseline_steps: usize,
    pub lr_baseline: f64,
    pub baseline_coord_batch: usize,

    // video
    pub beta: f64,
    pub video_penalty: f64,
    pub temporal_hidden: usize,

    // measurements and data
    pub quadrature: usize,
    pub views: usize,
    pub offsets: usize,
    pub count: usize,
    pub holdout: usize,
    pub size: usize,
    pub frames: usize,
    pub occlusion: usize,
    pub samples: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 64,
            k: 8,
            n_freq: 64,
            width: 64,
            layers: 4,
            head_width: 32,
            omega0: 30.0,
            patch_counts: Vec::new(),
            patch_overlap: 0.0,
            gating: GateKind::Table,
            encoder_hidden: Vec::new(),
            encoder_pool: 4,
            encoder_epochs: 0,
            lr_encoder: 1e-3,
            gate_noise: 0.0,
            epochs: 50,
            warmup_epochs: 10,
            batch_size: 16,
            coord_batch: 0,
            lambda: 0.01,
            l1_scale: 1.0,
            cv_scale: 1.0,
            cv_abs: false,
            optimizer: OptimizerKind::Adam,
            lr_dict: 1e-4,
            lr_gate: 1e-2,
            lr_final_fraction: 1.0,
            loss: LossKind::L2,
            adapt_steps: 200,
            adapt_solver: SolverKind::Adam,
            lr_adapt: 1e-2,
            adapt_k: None,
            init_noise: 1e-3,
            baseline_steps: 500,
            lr_baseline: 1e-4,
            baseline_coord_batch: 0,
            beta: 0.5,
            video_penalty: 0.01,
            temporal_hidden: 32,
            quadrature: 256,
            views: 16,
            offsets: 64,
            count: 64,
            holdout: 8,
            size: 32,
            frames: 16,
            occlusion: 8,
            samples: 10_000,
        }
    }
}

impl TaskConfig {
    pub fn arch(&self, channels: usize, m: usize) -> Architecture {
        Architecture {
            m,
            n_freq: self.n_freq,
            width: self.width,
            layers: self.layers,
            head_width: self.head_width,
            channels,
            omega0: self.omega0,
        }
    }

    pub fn grid(&self, m: usize) -> PatchGrid {
        if self.patch_counts.is_empty() {
            PatchGrid::single(m)
        } else {
            PatchGrid {
                counts: self.patch_counts.clone(),
                overlap: self.patch_overlap,
            }
        }
    }

    /// Sparsity used when adapting codes.
    pub fn adapt_k(&self) -> usize {
        self.adapt_k.unwrap_or(self.k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        if self.k == 0 || self.k > self.n {
            return Err(Error::invalid(format!("k={} must lie in 1..=n={}", self.k, self.n)));
        }
        if let Some(k) = self.adapt_k {
            if k == 0 || k > self.n {
                return Err(Error::invalid(format!("adapt_k={k} must lie in 1..=n={}", self.n)));
            }
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::invalid(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.quadrature < 2 {
            return Err(Error::invalid("quadrature needs at least 2 nodes"));
        }
        for (name, v) in [
            ("lr_dict", self.lr_dict),
            ("lr_gate", self.lr_gate),
            ("lr_adapt", self.lr_adapt),
            ("lr_baseline", self.lr_baseline),
            ("lr_encoder", self.lr_encoder),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lr_final_fraction > 0.0 && self.lr_final_fraction <= 1.0) {
            return Err(Error::invalid("lr_final_fraction must lie in (0, 1]"));
        }
        self.arch(1, 2).validate()?;
        if !self.patch_counts.is_empty() {
            self.grid(self.patch_counts.len())
                .validate(self.patch_counts.len())?;
        }
        Ok(())
    }
}
