use core::sync::atomic::{AtomicUsize, Ordering};

use crate::coordnet::{heads_on_tape, init_network, trunk_on_tape, Architecture};
use crate::diff::{ParamStore, Tape, Var};
use crate::nid::patch::PatchGrid;
use crate::nid::sparse::SparseCode;
use crate::prelude::*;
use crate::{Error, Result, Tensor};

/// A trunk with `n` expert heads per patch.
///
/// Atoms are numbered `p·n + j` for expert `j` of patch `p`; on a single
/// patch the atom and expert numbers coincide. Patch `p` keeps its
/// parameters under the prefix `p{p}.`.
#[derive(Debug)]
pub struct Dictionary {
    pub arch: Architecture,
    pub n: usize,
    pub grid: PatchGrid,
    pub params: ParamStore,
    trunk_evals: AtomicUsize,
    head_evals: AtomicUsize,
}

impl Clone for Dictionary {
    fn clone(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            n: self.n,
            grid: self.grid.clone(),
            params: self.params.clone(),
            trunk_evals: AtomicUsize::new(0),
            head_evals: AtomicUsize::new(0),
        }
    }
}

pub fn patch_prefix(p: usize) -> String {
    format!("p{p}.")
}

impl Dictionary {
    /// Freshly initialized dictionary; patch `p` is seeded with `seed + p`.
    pub fn new(arch: Architecture, n: usize, grid: PatchGrid, seed: u64) -> Result<Self> {
        grid.validate(arch.m)?;
        let mut params = ParamStore::new();
        for p in 0..grid.num_patches() {
            let part = init_network(&arch, n, seed.wrapping_add(p as u64), &patch_prefix(p))?;
            for (name, t) in part.iter() {
                params.insert(name, t.clone())?;
            }
        }
        Ok(Self::from_params(arch, n, grid, params))
    }

    pub fn from_params(arch: Architecture, n: usize, grid: PatchGrid, params: ParamStore) -> Self {
        Self {
            arch,
            n,
            grid,
            params,
            trunk_evals: AtomicUsize::new(0),
            head_evals: AtomicUsize::new(0),
        }
    }

    pub fn channels(&self) -> usize {
        self.arch.channels
    }

    pub fn num_patches(&self) -> usize {
        self.grid.num_patches()
    }

    /// Length of a dense code: experts times patches.
    pub fn num_atoms(&self) -> usize {
        self.n * self.num_patches()
    }

    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    /// Trunk passes since the last reset.
    pub fn trunk_evals(&self) -> usize {
        self.trunk_evals.load(Ordering::Relaxed)
    }

    /// Individual head evaluations since the last reset.
    pub fn head_evals(&self) -> usize {
        self.head_evals.load(Ordering::Relaxed)
    }

    pub fn reset_counters(&self) {
        self.trunk_evals.store(0, Ordering::Relaxed);
        self.head_evals.store(0, Ordering::Relaxed);
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        let total = self.num_atoms();
        match ids.iter().find(|&&i| i >= total) {
            Some(&bad) => Err(Error::OutOfRange {
                what: "atoms",
                index: bad,
                len: total,
            }),
            None => Ok(()),
        }
    }

    /// Records atoms `ids` at coordinates `x` on `tape`, as `[|ids| × B·C]`.
    ///
    /// `x_val` must be the value of `x`. Each touched patch runs its trunk
    /// once; only the requested heads are evaluated.
    pub fn basis_on_tape(
        &self,
        tape: &mut Tape,
        x: Var,
        x_val: &Tensor,
        ids: &[usize],
    ) -> Result<Var> {
        self.check_ids(ids)?;
        let mut uniq = ids.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        let (b, c) = (x_val.rows(), self.channels());
        let dispatch = if self.grid.is_single() {
            None
        } else {
            Some(self.grid.dispatch(x_val)?)
        };
        let mut parts = Vec::new();
        let mut start = 0;
        while start < uniq.len() {
            let p = uniq[start] / self.n;
            let mut end = start;
            while end < uniq.len() && uniq[end] / self.n == p {
                end += 1;
            }
            let local: Vec<usize> = uniq[start..end].iter().map(|i| i % self.n).collect();
            let prefix = patch_prefix(p);
            let feats = trunk_on_tape(tape, &self.params, &prefix, &self.arch, x)?;
            self.trunk_evals.fetch_add(1, Ordering::Relaxed);
            let bank = heads_on_tape(tape, &self.params, &prefix, feats, &local)?;
            self.head_evals.fetch_add(local.len(), Ordering::Relaxed);
            let mut part = tape.reshape(bank, &[local.len(), b * c])?;
            if let Some(d) = &dispatch {
                let mut w = vec![0.0; b * c];
                for (r, cover) in d.weights.iter().enumerate() {
                    if let Some(&(_, wr)) = cover.iter().find(|e| e.0 == p) {
                        w[r * c..(r + 1) * c].iter_mut().for_each(|v| *v = wr);
                    }
                }
                let mut mask = Vec::with_capacity(local.len() * b * c);
                for _ in 0..local.len() {
                    mask.extend_from_slice(&w);
                }
                let mask = tape.constant(Tensor::new(vec![local.len(), b * c], mask)?);
                part = tape.mul(part, mask)?;
            }
            parts.push(part);
            start = end;
        }
        let all = match parts.len() {
            0 => tape.constant(Tensor::zeros(&[0, b * c])),
            1 => parts[0],
            _ => tape.concat_rows(&parts)?,
        };
        if uniq.as_slice() == ids {
            return Ok(all);
        }
        let order: Vec<usize> = ids
            .iter()
            .map(|i| uniq.binary_search(i).expect("present"))
            .collect();
        tape.select_rows(all, &order)
    }

    /// Atom values `[|ids| × B × C]`.
    pub fn eval_atoms(&self, ids: &[usize], x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let v = self.basis_on_tape(&mut tape, xv, x, ids)?;
        tape.value(v)
            .clone()
            .reshape(&[ids.len(), x.rows(), self.channels()])
    }

    /// Basis values in coordinate-major layout `[B × |ids| × C]`.
    pub fn eval_basis(&self, ids: &[usize], x: &Tensor) -> Result<Tensor> {
        let bank = self.eval_atoms(ids, x)?;
        let (j, b, c) = (ids.len(), x.rows(), self.channels());
        let mut data = vec![0.0; b * j * c];
        for q in 0..j {
            for r in 0..b {
                data[(r * j + q) * c..(r * j + q + 1) * c]
                    .copy_from_slice(&bank.data()[(q * b + r) * c..(q * b + r + 1) * c]);
            }
        }
        Tensor::new(vec![b, j, c], data)
    }

    /// `f(x) = Σ α_i b_i(x)` over the entries of `code`, evaluating only the
    /// listed atoms. An empty code is the zero function.
    pub fn combine(&self, code: &SparseCode, x: &Tensor) -> Result<Tensor> {
        let (b, c) = (x.rows(), self.channels());
        if code.is_empty() {
            return Ok(Tensor::zeros(&[b, c]));
        }
        let ids = code.indices();
        let bank = self.eval_atoms(&ids, x)?;
        let mut out = vec![0.0; b * c];
        for (q, w) in code.weights().iter().enumerate() {
            for (o, v) in out.iter_mut().zip(&bank.data()[q * b * c..(q + 1) * b * c]) {
                *o += w * v;
            }
        }
        Tensor::new(vec![b, c], out)
    }

    /// Combination with a dense code over all atoms; zero weights are skipped.
    pub fn combine_dense(&self, alpha: &[f64], x: &Tensor) -> Result<Tensor> {
        if alpha.len() != self.num_atoms() {
            return Err(Error::shape(
                "combine",
                format!("{} weights for {} atoms", alpha.len(), self.num_atoms()),
            ));
        }
        self.combine(&SparseCode::from_dense(alpha), x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> Architecture {
        Architecture {
            m: 2,
            n_freq: 6,
            width: 5,
            layers: 1,
            head_width: 4,
            channels: 2,
            omega0: 10.0,
        }
    }

    fn coords() -> Tensor {
        Tensor::from_rows(&[&[0.1, -0.2], &[0.7, 0.3], &[-0.9, 0.95]])
    }

    #[test]
    fn one_hot_is_the_atom() {
        let d = Dictionary::new(arch(), 4, PatchGrid::single(2), 3).unwrap();
        let x = coords();
        let f = d.combine(&SparseCode::one_hot(2), &x).unwrap();
        let b = d.eval_atoms(&[2], &x).unwrap();
        assert_eq!(f.data(), b.data());
    }

    #[test]
    fn two_term_combination_matches_manual_sum() {
        let d = Dictionary::new(arch(), 4, PatchGrid::single(2), 3).unwrap();
        let x = coords();
        let code = SparseCode {
            entries: vec![(1, 0.3), (3, -1.2)],
            k: 2,
        };
        let f = d.combine(&code, &x).unwrap();
        let b1 = d.eval_atoms(&[1], &x).unwrap();
        let b3 = d.eval_atoms(&[3], &x).unwrap();
        for i in 0..f.len() {
            let oracle = 0.3 * b1.data()[i] - 1.2 * b3.data()[i];
            assert!((f.data()[i] - oracle).abs() < 1e-12);
        }
        let zero = SparseCode {
            entries: vec![(0, 0.0), (1, 0.0)],
            k: 2,
        };
        assert!(d.combine(&zero, &x).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(d.combine(&SparseCode::default(), &x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn combine_touches_only_listed_heads() {
        let d = Dictionary::new(arch(), 8, PatchGrid::single(2), 1).unwrap();
        let code = SparseCode {
            entries: vec![(0, 0.6), (5, 0.8)],
            k: 2,
        };
        d.reset_counters();
        d.combine(&code, &coords()).unwrap();
        assert_eq!(d.head_evals(), 2);
        assert_eq!(d.trunk_evals(), 1);
    }

    #[test]
    fn unordered_ids_keep_their_order() {
        let d = Dictionary::new(arch(), 4, PatchGrid::single(2), 3).unwrap();
        let x = coords();
        let a = d.eval_atoms(&[3, 0, 3], &x).unwrap();
        let b3 = d.eval_atoms(&[3], &x).unwrap();
        let b0 = d.eval_atoms(&[0], &x).unwrap();
        let per = b3.len();
        assert_eq!(&a.data()[..per], b3.data());
        assert_eq!(&a.data()[per..2 * per], b0.data());
        assert_eq!(&a.data()[2 * per..], b3.data());
        assert!(d.eval_atoms(&[4], &x).is_err());
    }

    #[test]
    fn patches_blend_their_atoms() {
        let grid = PatchGrid {
            counts: vec![2, 1],
            overlap: 0.25,
        };
        let d = Dictionary::new(arch(), 2, grid.clone(), 5).unwrap();
        assert_eq!(d.num_atoms(), 4);
        let x = Tensor::from_rows(&[&[0.0, 0.4], &[-0.8, 0.1]]);
        let both = d.eval_atoms(&[1, 3], &x).unwrap();
        let w = grid.dispatch(&x).unwrap();
        let single = Dictionary::from_params(arch(), 2, PatchGrid::single(2), {
            let mut s = ParamStore::new();
            for (name, t) in d.params.iter() {
                if let Some(rest) = name.strip_prefix("p1.") {
                    s.insert(format!("p0.{rest}"), t.clone()).unwrap();
                }
            }
            s
        });
        let raw = single.eval_atoms(&[1], &x).unwrap();
        // atom 3 is expert 1 of patch 1; row 0 sits mid-band, row 1 outside
        let c = 2;
        let wt0 = w.weights[0].iter().find(|e| e.0 == 1).unwrap().1;
        assert!((wt0 - 0.5).abs() < 1e-15);
        for ch in 0..c {
            let got = both.data()[(2 + 0) * c + ch];
            assert!((got - 0.5 * raw.data()[ch]).abs() < 1e-12);
            assert_eq!(both.data()[(2 + 1) * c + ch], 0.0);
        }
    }
}
