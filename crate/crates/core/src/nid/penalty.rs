//! Regularizers on codes.

use crate::diff::cv_of;
use crate::nid::sparse::SparseCode;
use crate::prelude::*;
use crate::{Error, Result};

/// Added to the squared mean in the CV penalty.
pub const CV_EPS: f64 = 1e-8;

/// `Var(ā) / (mean(ā)² + ε)` with `ā` the sum of the densified codes and
/// population variance. With `abs`, magnitudes are summed instead.
pub fn cv_penalty(codes: &[SparseCode], n: usize, abs: bool) -> Result<f64> {
    if codes.is_empty() {
        return Err(Error::Empty("code batch"));
    }
    if n == 0 {
        return Err(Error::invalid("expert count must be positive"));
    }
    let mut bar = vec![0.0; n];
    for code in codes {
        for &(i, w) in &code.entries {
            if i >= n {
                return Err(Error::OutOfRange {
                    what: "experts",
                    index: i,
                    len: n,
                });
            }
            bar[i] += if abs { w.abs() } else { w };
        }
    }
    Ok(cv_of(&bar, CV_EPS))
}

/// `Σ_i ‖h_i‖₁` over a batch of dense gate vectors.
pub fn l1_penalty<R: AsRef<[f64]>>(gates: &[R]) -> f64 {
    gates
        .iter()
        .map(|g| g.as_ref().iter().map(|v| v.abs()).sum::<f64>())
        .sum()
}

/// Weights `exp(β·i)` for code index `i = 0..n`.
pub fn video_weights(n: usize, beta: f64) -> Vec<f64> {
    (0..n).map(|i| (beta * i as f64).exp()).collect()
}

/// `Σ_i |α_i| · exp(β·i)` with 0-based indices.
pub fn video_penalty(alpha: &[f64], beta: f64) -> f64 {
    alpha
        .iter()
        .zip(video_weights(alpha.len(), beta))
        .map(|(a, w)| a.abs() * w)
        .sum()
}

/// Share of `Σ|α|` carried by each expert over a batch of dense codes.
pub fn utilization<R: AsRef<[f64]>>(codes: &[R], n: usize) -> Vec<f64> {
    let mut mass = vec![0.0; n];
    for c in codes {
        for (m, v) in mass.iter_mut().zip(c.as_ref()) {
            *m += v.abs();
        }
    }
    let total: f64 = mass.iter().sum();
    if total > 0.0 {
        mass.iter_mut().for_each(|m| *m /= total);
    }
    mass
}
