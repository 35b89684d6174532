//! Rendering throughput and model size.

use std::time::Instant;

use nid_core::data::Image;
use nid_core::nid::SparseCode;
use nid_core::tasks::{sparsify_groups, CodedField, TrainedModel};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct Throughput {
    /// Median over the timed repetitions.
    pub images_per_sec: f64,
    /// Exact scalar count of dictionary plus gate.
    pub params: usize,
    /// Atom-head evaluations spent on one image.
    pub head_evals_per_image: usize,
}

/// The code used for timing: the first `k` atoms of every patch with equal
/// weights.
fn bench_code(model: &TrainedModel) -> Result<SparseCode> {
    let d = &model.dictionary;
    let ones = vec![1.0; d.num_atoms()];
    let dense = sparsify_groups(&ones, model.k, d.num_patches())?;
    Ok(SparseCode::from_dense(&dense))
}

/// Renders a `size × size` image `reps` times after one warm-up render.
pub fn bench_throughput(model: &TrainedModel, size: usize, reps: usize) -> Result<Throughput> {
    let code = bench_code(model)?;
    let field = CodedField {
        dictionary: &model.dictionary,
        code: &code,
    };
    model.dictionary.reset_counters();
    Image::from_field(size, size, &field)?;
    let head_evals_per_image = model.dictionary.head_evals();
    let mut rates = Vec::with_capacity(reps.max(1));
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        Image::from_field(size, size, &field)?;
        rates.push(1.0 / t.elapsed().as_secs_f64().max(1e-12));
    }
    rates.sort_by(f64::total_cmp);
    let mid = rates.len() / 2;
    let images_per_sec = if rates.len() % 2 == 1 {
        rates[mid]
    } else {
        0.5 * (rates[mid - 1] + rates[mid])
    };
    Ok(Throughput {
        images_per_sec,
        params: model.param_count(),
        head_evals_per_image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nid_core::coordnet::Architecture;
    use nid_core::nid::{Dictionary, Gate, PatchGrid};

    fn model(n: usize, k: usize) -> TrainedModel {
        let arch = Architecture {
            m: 2,
            n_freq: 4,
            width: 8,
            layers: 2,
            head_width: 4,
            channels: 1,
            omega0: 10.0,
        };
        TrainedModel {
            dictionary: Dictionary::new(arch, n, PatchGrid::single(2), 1).unwrap(),
            gate: Gate::table(3, n, 2).unwrap(),
            k,
            log: Vec::new(),
            utilization: vec![0.0; n],
        }
    }

    #[test]
    fn sparser_codes_evaluate_fewer_heads() {
        let dense = bench_throughput(&model(8, 8), 4, 1).unwrap();
        let sparse = bench_throughput(&model(8, 2), 4, 1).unwrap();
        assert!(sparse.head_evals_per_image <= dense.head_evals_per_image);
        assert_eq!(sparse.head_evals_per_image, 2);
        assert!(dense.images_per_sec > 0.0);
    }

    #[test]
    fn param_count_covers_dictionary_and_gate() {
        let m = model(4, 2);
        let t = bench_throughput(&m, 2, 1).unwrap();
        assert_eq!(t.params, m.dictionary.param_count() + 3 * 4);
    }
}
