use crate::data::PolygonSamples;
use crate::measure::{Field, SdfSample};
use crate::nid::SparseCode;
use crate::prelude::*;
use crate::tasks::adapt::{adapt_code, CodeInit};
use crate::tasks::config::{LossKind, TaskConfig};
use crate::tasks::model::{Block, Functional, TrainedModel};
use crate::{Error, Result, Tensor};

/// Central-difference step for surface normals.
const NORMAL_STEP: f64 = 1e-4;

fn sample_block(samples: &[SdfSample]) -> Result<Block> {
    let first = samples.first().ok_or(Error::Empty("SDF sample set"))?;
    let m = first.x.len();
    let omega: Vec<f64> = samples.iter().flat_map(|s| s.x.iter().copied()).collect();
    if omega.len() != m * samples.len() {
        return Err(Error::shape("sdf", "points of mixed dimension"));
    }
    let y = samples.iter().map(|s| if s.on_surface { 0.0 } else { s.d }).collect();
    Ok(Block {
        omega: Tensor::new(vec![samples.len(), m], omega)?,
        y: Tensor::new(vec![samples.len(), 1], y)?,
        functional: Functional::Pixels,
        loss: LossKind::L1,
        weight: 1.0,
    })
}

/// Two ℓ1 blocks whose sum is `mean |f| on surface + mean |f − d| off
/// surface`.
pub fn sdf_blocks(samples: &PolygonSamples) -> Result<Vec<Block>> {
    Ok(vec![sample_block(&samples.on)?, sample_block(&samples.off)?])
}

#[derive(Clone, Debug)]
pub struct SdfFit {
    pub code: SparseCode,
    pub losses: Vec<f64>,
}

pub fn sdf_fit(
    model: &TrainedModel,
    samples: &PolygonSamples,
    init: &CodeInit,
    cfg: &TaskConfig,
) -> Result<SdfFit> {
    let fit = adapt_code(model, &sdf_blocks(samples)?, init, cfg)?;
    Ok(SdfFit {
        code: fit.code,
        losses: fit.losses,
    })
}

/// Zero crossings of channel 0 of `f` along the edges of a `res × res`
/// lattice spanning `[-1, 1]²`, with unit normals from the field gradient.
///
/// Crossings are placed by linear interpolation between lattice nodes.
/// Points where the gradient vanishes are dropped.
pub fn zero_level_set(f: &dyn Field, res: usize) -> Result<(Vec<[f64; 2]>, Vec<[f64; 2]>)> {
    if res < 2 {
        return Err(Error::invalid("zero-level lattice needs at least 2 nodes per side"));
    }
    let at = |i: usize| -1.0 + 2.0 * i as f64 / (res - 1) as f64;
    let mut nodes = Vec::with_capacity(res * res * 2);
    for r in 0..res {
        for c in 0..res {
            nodes.push(at(c));
            nodes.push(at(r));
        }
    }
    let vals = f.eval(&Tensor::new(vec![res * res, 2], nodes)?)?;
    let ch = vals.cols().max(1);
    let v = |r: usize, c: usize| vals.data()[(r * res + c) * ch];
    let mut pts = Vec::new();
    let mut push = |a: [f64; 2], b: [f64; 2], va: f64, vb: f64| {
        if (va < 0.0) != (vb < 0.0) {
            let t = va / (va - vb);
            pts.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    };
    for r in 0..res {
        for c in 0..res {
            let p = [at(c), at(r)];
            if c + 1 < res {
                push(p, [at(c + 1), at(r)], v(r, c), v(r, c + 1));
            }
            if r + 1 < res {
                push(p, [at(c), at(r + 1)], v(r, c), v(r + 1, c));
            }
        }
    }
    if pts.is_empty() {
        return Ok((pts, Vec::new()));
    }
    let h = NORMAL_STEP;
    let mut probe = Vec::with_capacity(pts.len() * 8);
    for p in &pts {
        for d in [[h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]] {
            probe.push(p[0] + d[0]);
            probe.push(p[1] + d[1]);
        }
    }
    let g = f.eval(&Tensor::new(vec![pts.len() * 4, 2], probe)?)?;
    let gv = |i: usize| g.data()[i * ch];
    let mut out_pts = Vec::with_capacity(pts.len());
    let mut normals = Vec::with_capacity(pts.len());
    for (i, p) in pts.into_iter().enumerate() {
        let gx = gv(4 * i) - gv(4 * i + 1);
        let gy = gv(4 * i + 2) - gv(4 * i + 3);
        let norm = (gx * gx + gy * gy).sqrt();
        if norm > 0.0 && norm.is_finite() {
            out_pts.push(p);
            normals.push([gx / norm, gy / norm]);
        }
    }
    Ok((out_pts, normals))
}
