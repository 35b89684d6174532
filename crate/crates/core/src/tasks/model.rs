use serde::{Deserialize, Serialize};

use crate::measure::{Field, MeasurementSet, RayBatch};
use crate::nid::{sparsify, Dictionary, Gate, GateInput, GateKind, GatingMode, SparseCode};
use crate::prelude::*;
use crate::tasks::config::LossKind;
use crate::{Error, Result, Tensor};

/// How a field turns into measurements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Functional {
    /// `y = f(ω)` at coordinates `ω`.
    Pixels,
    /// `y = ∫ f` along the ray `ω = (r, φ)`, using `q` midpoint nodes.
    Rays { q: usize },
}

/// One group of observations with its own functional, loss and weight.
///
/// The block loss is `weight · mean(loss(pred − y))` over all entries.
#[derive(Clone, Debug)]
pub struct Block {
    pub omega: Tensor,
    pub y: Tensor,
    pub functional: Functional,
    pub loss: LossKind,
    pub weight: f64,
}

/// Field coordinates a block is evaluated at, plus ray weights when the
/// functional integrates.
#[derive(Clone, Debug)]
pub(crate) struct Nodes {
    pub coords: Tensor,
    pub rays: Option<Vec<f64>>,
    pub q: usize,
}

impl Block {
    pub fn new(set: &MeasurementSet, functional: Functional, loss: LossKind) -> Self {
        Self {
            omega: set.omega.clone(),
            y: set.y.clone(),
            functional,
            loss,
            weight: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.omega.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn validate(&self, channels: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty("measurement block"));
        }
        if self.y.rows() != self.omega.rows() || self.y.cols() != channels {
            return Err(Error::shape(
                "block",
                format!(
                    "{} measurements with targets {:?} for {channels} channels",
                    self.omega.rows(),
                    self.y.shape()
                ),
            ));
        }
        if let Functional::Rays { q } = self.functional {
            if self.omega.cols() != 2 || q < 2 {
                return Err(Error::invalid("ray blocks need (r, φ) rows and q ≥ 2"));
            }
        }
        Ok(())
    }

    /// Nodes for measurement rows `rows` (all rows when `None`).
    pub(crate) fn nodes(&self, rows: Option<&[usize]>) -> Result<Nodes> {
        let omega = match rows {
            Some(r) => self.omega.select_rows(r)?,
            None => self.omega.clone(),
        };
        match self.functional {
            Functional::Pixels => Ok(Nodes {
                coords: omega,
                rays: None,
                q: 1,
            }),
            Functional::Rays { q } => {
                let rays: Vec<(f64, f64)> =
                    omega.data().chunks(2).map(|w| (w[0], w[1])).collect();
                let batch = RayBatch::new(&rays, q)?;
                Ok(Nodes {
                    coords: batch.coords,
                    rays: Some(batch.weights),
                    q,
                })
            }
        }
    }
}

/// Loss of one block given predictions with the same shape as `y`.
pub(crate) fn block_loss(kind: LossKind, pred: &[f64], y: &[f64]) -> f64 {
    let n = y.len().max(1) as f64;
    match kind {
        LossKind::L2 => pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n,
        LossKind::L1 => pred.iter().zip(y).map(|(p, t)| (p - t).abs()).sum::<f64>() / n,
    }
}

/// Dense top-k sparsification applied independently to each of `groups`
/// equal blocks of `h`.
pub fn sparsify_groups(h: &[f64], k: usize, groups: usize) -> Result<Vec<f64>> {
    if groups == 0 || h.len() % groups != 0 {
        return Err(Error::shape(
            "sparsify",
            format!("{} gates cannot split into {groups} groups", h.len()),
        ));
    }
    let n = h.len() / groups;
    let mut out = vec![0.0; h.len()];
    for g in 0..groups {
        let code = sparsify(&h[g * n..(g + 1) * n], k)?;
        for (i, w) in code.entries {
            out[g * n + i] = w;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mode: GatingMode,
    /// Mean total objective over the epoch's batches.
    pub loss: f64,
    pub data_loss: f64,
    pub penalty: f64,
}

/// A trained dictionary with its gate.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub dictionary: Dictionary,
    pub gate: Gate,
    /// Sparsity per patch.
    pub k: usize,
    pub log: Vec<EpochLog>,
    /// Share of total `|α|` mass per atom over the training instances.
    pub utilization: Vec<f64>,
}

impl TrainedModel {
    /// Sparse code the gate assigns to `q`.
    pub fn code_for(&self, q: GateInput<'_>) -> Result<SparseCode> {
        let raw = self.gate.raw_gates(q)?;
        let dense = sparsify_groups(&raw, self.k, self.dictionary.num_patches())?;
        Ok(SparseCode::from_dense(&dense))
    }

    /// Mean of the gate table rows; `None` for encoder gates.
    pub fn mean_table_row(&self) -> Option<Vec<f64>> {
        if self.gate.kind != GateKind::Table {
            return None;
        }
        let t = self.gate.params.get(crate::nid::TABLE).ok()?;
        let mut mean = vec![0.0; t.cols()];
        for row in t.data().chunks(t.cols()) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / t.rows() as f64;
            }
        }
        Some(mean)
    }

    pub fn param_count(&self) -> usize {
        self.dictionary.param_count() + self.gate.param_count()
    }
}

/// A dictionary combined with a fixed code, evaluable anywhere.
#[derive(Clone, Copy, Debug)]
pub struct CodedField<'a> {
    pub dictionary: &'a Dictionary,
    pub code: &'a SparseCode,
}

impl Field for CodedField<'_> {
    fn channels(&self) -> usize {
        self.dictionary.channels()
    }

    fn eval(&self, x: &Tensor) -> Result<Tensor> {
        self.dictionary.combine(self.code, x)
    }
}
