use crate::coordnet::Architecture;
use crate::diff::{AdamState, Tape};
use crate::measure::Field;
use crate::nid::{Dictionary, PatchGrid, SparseCode};
use crate::prelude::*;
use crate::rng;
use crate::tasks::config::{LossKind, TaskConfig};
use crate::tasks::model::Block;
use crate::{Error, Result, Tensor};

/// A single coordinate network fitted to one scene from scratch.
#[derive(Clone, Debug)]
pub struct BaselineModel {
    /// One-atom dictionary holding the network.
    pub network: Dictionary,
    /// Objective at every step, measured on that step's mini-batch.
    pub losses: Vec<f64>,
}

impl Field for BaselineModel {
    fn channels(&self) -> usize {
        self.network.channels()
    }

    fn eval(&self, x: &Tensor) -> Result<Tensor> {
        self.network.combine(&SparseCode::one_hot(0), x)
    }
}

/// Trains a fresh network on `blocks` with Adam for `cfg.baseline_steps`
/// steps at `cfg.lr_baseline`.
///
/// Each step samples `cfg.baseline_coord_batch` measurements per block (all
/// when 0). `on_step(step, model)` runs after each step; returning `true`
/// stops early.
pub fn baseline_fit(
    blocks: &[Block],
    arch: &Architecture,
    cfg: &TaskConfig,
    mut on_step: Option<&mut dyn FnMut(usize, &BaselineModel) -> bool>,
) -> Result<BaselineModel> {
    if blocks.is_empty() {
        return Err(Error::Empty("measurement set"));
    }
    for b in blocks {
        b.validate(arch.channels)?;
    }
    let seed = cfg.seed.wrapping_add(2_000_003);
    let network = Dictionary::new(arch.clone(), 1, PatchGrid::single(arch.m), seed)?;
    let mut model = BaselineModel {
        network,
        losses: Vec::with_capacity(cfg.baseline_steps),
    };
    let mut opt = AdamState::new(cfg.lr_baseline);
    let mut r = rng::substream(seed, 3);
    let c = arch.channels;
    for step in 0..cfg.baseline_steps {
        let mut tape = Tape::new();
        let mut total = None;
        for b in blocks {
            let take = cfg.baseline_coord_batch;
            let rows: Option<Vec<usize>> = (take > 0 && take < b.len()).then(|| {
                let mut all: Vec<usize> = (0..b.len()).collect();
                rng::shuffle(&mut r, &mut all);
                all.truncate(take);
                all.sort_unstable();
                all
            });
            let nodes = b.nodes(rows.as_deref())?;
            let x = tape.constant(nodes.coords.clone());
            let mut pred = model.network.basis_on_tape(&mut tape, x, &nodes.coords, &[0])?;
            pred = tape.reshape(pred, &[nodes.coords.rows(), c])?;
            if let Some(w) = &nodes.rays {
                pred = tape.segment_sum(pred, nodes.q, w)?;
            }
            let target = match &rows {
                Some(sel) => b.y.select_rows(sel)?,
                None => b.y.clone(),
            };
            let l = match b.loss {
                LossKind::L2 => tape.loss_l2(pred, &target)?,
                LossKind::L1 => tape.loss_l1(pred, &target)?,
            };
            let l = tape.scale(l, b.weight)?;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        let total = total.expect("at least one block");
        let value = tape.scalar(total);
        if !value.is_finite() {
            return Err(Error::NonFinite("baseline loss"));
        }
        tape.backward_into(total, &mut model.network.params)?;
        opt.step(&mut model.network.params)?;
        model.losses.push(value);
        if let Some(cb) = on_step.as_mut() {
            if cb(step + 1, &model) {
                break;
            }
        }
    }
    model.network.params.clear_grads();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::grid_coords;
    use crate::tasks::adapt::pixel_block;

    fn arch() -> Architecture {
        Architecture {
            m: 2,
            n_freq: 16,
            width: 16,
            layers: 2,
            head_width: 8,
            channels: 1,
            omega0: 10.0,
        }
    }

    #[test]
    fn zero_steps_is_the_random_init() {
        let coords = grid_coords(4, 4);
        let block = pixel_block(coords.clone(), Tensor::zeros(&[16, 1]), LossKind::L2);
        let cfg = TaskConfig {
            baseline_steps: 0,
            ..TaskConfig::default()
        };
        let m = baseline_fit(&[block], &arch(), &cfg, None).unwrap();
        let fresh = Dictionary::new(arch(), 1, PatchGrid::single(2), cfg.seed + 2_000_003).unwrap();
        assert_eq!(m.network.params.checksum(), fresh.params.checksum());
        assert!(m.losses.is_empty());
    }

    #[test]
    fn fits_a_constant_image() {
        let coords = grid_coords(8, 8);
        let block = pixel_block(coords, Tensor::full(&[64, 1], 0.6), LossKind::L2);
        let cfg = TaskConfig {
            baseline_steps: 200,
            lr_baseline: 3e-3,
            ..TaskConfig::default()
        };
        let m = baseline_fit(&[block], &arch(), &cfg, None).unwrap();
        assert!(*m.losses.last().unwrap() < 1e-4, "{:?}", m.losses.last());
    }
}
