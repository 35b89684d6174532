use serde::{Deserialize, Serialize};

use crate::prelude::*;
use crate::{Error, Result, Tensor};

/// Regular partition of `[-1, 1]^m` into overlapping patches.
///
/// Along each axis the `P` cells have width `s = 2/P`; around every interior
/// cell boundary there is a band of half-width `overlap·s` in which the two
/// neighbouring cells are blended with a linear ramp. Blend weights are the
/// product of the per-axis weights, so they sum to one everywhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub counts: Vec<usize>,
    pub overlap: f64,
}

/// Covering patches of each coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct Dispatch {
    pub weights: Vec<Vec<(usize, f64)>>,
    /// Coordinates that were outside the domain and got clamped.
    pub clamped: usize,
}

impl PatchGrid {
    /// One patch covering the whole domain.
    pub fn single(m: usize) -> Self {
        Self {
            counts: vec![1; m],
            overlap: 0.0,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.counts.len() != m {
            return Err(Error::invalid(format!(
                "patch grid has {} axes, coordinates have {m}",
                self.counts.len()
            )));
        }
        if self.counts.contains(&0) {
            return Err(Error::invalid("patch counts must be positive"));
        }
        if !(0.0..0.5).contains(&self.overlap) {
            return Err(Error::invalid(format!(
                "patch overlap {} outside [0, 0.5)",
                self.overlap
            )));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_single(&self) -> bool {
        self.num_patches() == 1
    }

    fn axis(&self, p: usize, t: f64) -> ([(usize, f64); 2], usize) {
        let s = 2.0 / p as f64;
        let i = (((t + 1.0) / s) as usize).min(p - 1);
        let delta = self.overlap * s;
        if delta > 0.0 {
            if i > 0 {
                let b = -1.0 + i as f64 * s;
                if t < b + delta {
                    let w = (t - (b - delta)) / (2.0 * delta);
                    return ([(i - 1, 1.0 - w), (i, w)], 2);
                }
            }
            if i + 1 < p {
                let b = -1.0 + (i + 1) as f64 * s;
                if t > b - delta {
                    let w = (t - (b - delta)) / (2.0 * delta);
                    return ([(i, 1.0 - w), (i + 1, w)], 2);
                }
            }
        }
        ([(i, 1.0), (0, 0.0)], 1)
    }

    /// Blend weights for each row of `x: [B × m]`, patches ascending.
    pub fn dispatch(&self, x: &Tensor) -> Result<Dispatch> {
        let m = self.counts.len();
        if x.cols() != m {
            return Err(Error::shape(
                "patch_dispatch",
                format!("x {:?} for a {m}-axis grid", x.shape()),
            ));
        }
        let mut clamped = 0;
        let mut weights = Vec::with_capacity(x.rows());
        for row in x.data().chunks(m.max(1)) {
            let mut acc: Vec<(usize, f64)> = vec![(0, 1.0)];
            let mut outside = false;
            for (d, &raw) in row.iter().enumerate() {
                let t = raw.clamp(-1.0, 1.0);
                outside |= t != raw;
                let (pairs, used) = self.axis(self.counts[d], t);
                let mut next = Vec::with_capacity(acc.len() * used);
                for &(id, w) in &acc {
                    for &(i, wi) in &pairs[..used] {
                        next.push((id * self.counts[d] + i, w * wi));
                    }
                }
                acc = next;
            }
            clamped += outside as usize;
            acc.retain(|e| e.1 > 0.0);
            acc.sort_by_key(|e| e.0);
            weights.push(acc);
        }
        Ok(Dispatch { weights, clamped })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_center_has_one_patch() {
        let g = PatchGrid {
            counts: vec![2, 2],
            overlap: 0.2,
        };
        let d = g.dispatch(&Tensor::from_rows(&[&[-0.5, 0.5]])).unwrap();
        assert_eq!(d.weights[0], vec![(1, 1.0)]);
    }

    #[test]
    fn band_midpoint_splits_evenly() {
        let g = PatchGrid {
            counts: vec![2],
            overlap: 0.2,
        };
        let d = g.dispatch(&Tensor::from_rows(&[&[0.0]])).unwrap();
        assert_eq!(d.weights[0], vec![(0, 0.5), (1, 0.5)]);
    }

    #[test]
    fn zero_overlap_is_hard() {
        let g = PatchGrid {
            counts: vec![3, 2],
            overlap: 0.0,
        };
        let x = Tensor::from_rows(&[&[-0.9, -0.9], &[0.0, 0.1], &[0.99, 0.99]]);
        let d = g.dispatch(&x).unwrap();
        assert_eq!(d.weights[0], vec![(0, 1.0)]);
        assert_eq!(d.weights[1], vec![(3, 1.0)]);
        assert_eq!(d.weights[2], vec![(5, 1.0)]);
    }

    #[test]
    fn outside_is_clamped() {
        let g = PatchGrid::single(2);
        let d = g.dispatch(&Tensor::from_rows(&[&[1.5, 0.0]])).unwrap();
        assert_eq!(d.clamped, 1);
        assert_eq!(d.weights[0], vec![(0, 1.0)]);
    }
}
