use crate::prelude::*;
use crate::{Error, Result};

/// Indices of the `k` entries of largest magnitude, ascending.
///
/// Ties in magnitude go to the lower index. `k` larger than the input
/// keeps everything.
pub fn abs_top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    if k < values.len() {
        order.sort_by(|&a, &b| {
            values[b]
                .abs()
                .total_cmp(&values[a].abs())
                .then(a.cmp(&b))
        });
        order.truncate(k);
        order.sort_unstable();
    }
    order
}

/// A k-sparse code: `(expert index, weight)` pairs with unique indices.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SparseCode {
    pub entries: Vec<(usize, f64)>,
    pub k: usize,
}

impl SparseCode {
    pub fn one_hot(index: usize) -> Self {
        Self {
            entries: vec![(index, 1.0)],
            k: 1,
        }
    }

    /// Non-zero entries of a dense vector; `k` is set to their count.
    pub fn from_dense(dense: &[f64]) -> Self {
        let entries: Vec<(usize, f64)> = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .collect();
        let k = entries.len();
        Self { entries, k }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
    }

    /// Dense vector of length `n`; fails if an index is out of range.
    pub fn densify(&self, n: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; n];
        for &(i, w) in &self.entries {
            if i >= n {
                return Err(Error::OutOfRange {
                    what: "experts",
                    index: i,
                    len: n,
                });
            }
            out[i] += w;
        }
        Ok(out)
    }

    /// Index of the entry with the largest magnitude.
    pub fn argmax(&self) -> Option<usize> {
        self.entries
            .iter()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|e| e.0)
    }
}

/// Keeps the `k` largest-magnitude gates and rescales them to unit ℓ2 norm.
pub fn sparsify(h: &[f64], k: usize) -> Result<SparseCode> {
    if k == 0 || k > h.len() {
        return Err(Error::invalid(format!(
            "sparsity k={k} outside 1..={}",
            h.len()
        )));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sparsify"));
    }
    let idx = abs_top_k(h, k);
    let norm = idx.iter().map(|&i| h[i] * h[i]).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateNorm);
    }
    Ok(SparseCode {
        entries: idx.into_iter().map(|i| (i, h[i] / norm)).collect(),
        k,
    })
}

/// Hard threshold to the `k` largest magnitudes without rescaling.
pub fn hard_threshold(h: &mut [f64], k: usize) {
    let keep = abs_top_k(h, k);
    let mut mask = vec![false; h.len()];
    for i in keep {
        mask[i] = true;
    }
    for (v, m) in h.iter_mut().zip(mask) {
        if !m {
            *v = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let c = sparsify(&[-3.0, 1.0, 2.0], 2).unwrap();
        let s = 13f64.sqrt();
        assert_eq!(c.indices(), vec![0, 2]);
        assert!((c.entries[0].1 + 3.0 / s).abs() < 1e-15);
        assert!((c.entries[1].1 - 2.0 / s).abs() < 1e-15);
    }

    #[test]
    fn full_k_on_unit_vector_is_identity() {
        let h = [0.6, 0.0, -0.8];
        let c = sparsify(&h, 3).unwrap();
        assert_eq!(c.densify(3).unwrap(), h.to_vec());
    }

    #[test]
    fn positive_scale_invariance() {
        let h = [0.3, -1.7, 0.2, 0.9];
        let scaled: Vec<f64> = h.iter().map(|v| v * 5.0).collect();
        let a = sparsify(&h, 2).unwrap();
        let b = sparsify(&scaled, 2).unwrap();
        assert_eq!(a.indices(), b.indices());
        for (x, y) in a.weights().iter().zip(b.weights()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(abs_top_k(&[1.0, -1.0, 1.0, 0.5], 2), vec![0, 1]);
        assert_eq!(abs_top_k(&[0.5, 2.0, -2.0, 2.0], 2), vec![1, 2]);
    }

    #[test]
    fn errors() {
        assert_eq!(sparsify(&[0.0, 0.0], 1).unwrap_err(), Error::DegenerateNorm);
        assert!(sparsify(&[1.0, 2.0], 0).is_err());
        assert!(sparsify(&[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn hard_threshold_keeps_values() {
        let mut h = [0.1, -3.0, 2.0, 0.5];
        hard_threshold(&mut h, 2);
        assert_eq!(h, [0.0, -3.0, 2.0, 0.0]);
    }
}
