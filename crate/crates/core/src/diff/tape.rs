//! A Wengert list over dense tensors.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the list in reverse creation order, which is a valid reverse
//! topological order because a node can only reference earlier nodes.
//! Gradients accumulate additively at nodes with several consumers.

use crate::diff::params::ParamStore;
use crate::nid::sparse::abs_top_k;
use crate::prelude::*;
use crate::tensor::gemm;
use crate::{Error, Result, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    MatMul { a: Var, b: Var },
    Sine { x: Var, omega: f64 },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    AddBias { x: Var, b: Var },
    Sum { x: Var },
    Mean { x: Var },
    LossL2 { pred: Var, target: Vec<f64> },
    LossL1 { pred: Var, target: Vec<f64> },
    WeightedAbsSum { x: Var, weights: Option<Vec<f64>> },
    Stack { xs: Vec<Var> },
    ConcatRows { xs: Vec<Var> },
    Reshape { x: Var },
    SelectRows { x: Var, rows: Vec<usize> },
    SelectCols { x: Var, cols: Vec<usize> },
    ScatterCols { x: Var, cols: Vec<usize> },
    Sparsify { h: Var, kept: Vec<Vec<usize>>, norms: Vec<f64> },
    Cv { codes: Var, abs: bool, eps: f64 },
    SegmentSum { x: Var, seg_len: usize, weights: Vec<f64> },
    HeadBank(Box<HeadBankCache>),
}

#[derive(Clone, Debug)]
struct HeadBankCache {
    feats: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    ids: Vec<usize>,
    // pre-activations of the hidden layer, [ids × B × hw]
    z1: Vec<f64>,
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded forward computation.
///
/// A tape is single-threaded; build one per forward pass and drop it after
/// the backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(Var, String)>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the seed with respect to `v`; zeros if `v` does not
    /// influence the seed.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn get_slice(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("operands {:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Differentiable leaf not bound to a parameter (e.g. coordinates when
    /// input gradients are wanted).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf holding a copy of parameter `name`; its gradient is delivered
    /// back to the store by [`Gradients`] accumulation.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.get(name)?.clone();
        let v = self.push(value, Op::Leaf, true);
        self.bindings.push((v, name.to_string()));
        Ok(v)
    }

    /// `x · W + b` for `x: [B×din]`, `W: [din×dout]`, `b: [dout]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = affine_forward(self.value(x), self.value(w), self.value(b))?;
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(out, Op::Affine { x, w, b }, ng))
    }

    /// `[M×K] · [K×N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = (av.rows(), av.cols());
        let (k2, n) = (bv.rows(), bv.cols());
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("lhs {:?} rhs {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, 0.0);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, ng))
    }

    /// Elementwise `sin(omega · x)`.
    pub fn sine(&mut self, x: Var, omega: f64) -> Result<Var> {
        let out = sine_forward(self.value(x), omega)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Sine { x, omega }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("add", av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add { a, b }, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("sub", av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub { a, b }, ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("mul", av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul { a, b }, ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * c).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Scale { x, c }, ng))
    }

    /// Adds a row vector `b: [N]` to every row of `x: [M×N]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let n = xv.cols();
        if bv.len() != n {
            return Err(Error::shape(
                "add_bias",
                format!("x {:?} bias {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            for (v, bb) in row.iter_mut().zip(bv.data()) {
                *v += bb;
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(out, Op::AddBias { x, b }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s: f64 = xv.data().iter().sum();
        let m = if xv.is_empty() { 0.0 } else { s / xv.len() as f64 };
        let ng = self.ng(x);
        self.push(Tensor::scalar(m), Op::Mean { x }, ng)
    }

    /// Mean squared error against a constant target.
    pub fn loss_l2(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let value = loss_l2(self.value(pred), target)?;
        let ng = self.ng(pred);
        Ok(self.push(
            Tensor::scalar(value),
            Op::LossL2 {
                pred,
                target: target.data().to_vec(),
            },
            ng,
        ))
    }

    /// Mean absolute error against a constant target; subgradient of |0| is 0.
    pub fn loss_l1(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let value = loss_l1(self.value(pred), target)?;
        let ng = self.ng(pred);
        Ok(self.push(
            Tensor::scalar(value),
            Op::LossL1 {
                pred,
                target: target.data().to_vec(),
            },
            ng,
        ))
    }

    /// `Σ wᵢ |xᵢ|` with unit weights when `weights` is `None`.
    pub fn weighted_abs_sum(&mut self, x: Var, weights: Option<Vec<f64>>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(w) = &weights {
            if w.len() != xv.len() {
                return Err(Error::shape(
                    "weighted_abs_sum",
                    format!("{} values, {} weights", xv.len(), w.len()),
                ));
            }
        }
        let s = match &weights {
            Some(w) => xv.data().iter().zip(w).map(|(v, w)| w * v.abs()).sum(),
            None => xv.data().iter().map(|v| v.abs()).sum(),
        };
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(s), Op::WeightedAbsSum { x, weights }, ng))
    }

    /// Flattens each input and stacks them as the rows of a matrix.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let per = xs.first().map_or(0, |&v| self.value(v).len());
        let mut data = Vec::with_capacity(per * xs.len());
        for &v in xs {
            let t = self.value(v);
            if t.len() != per {
                return Err(Error::shape(
                    "stack",
                    format!("row lengths {} and {}", per, t.len()),
                ));
            }
            data.extend_from_slice(t.data());
        }
        let ng = xs.iter().any(|&v| self.ng(v));
        let out = Tensor::new(vec![xs.len(), per], data)?;
        Ok(self.push(out, Op::Stack { xs: xs.to_vec() }, ng))
    }

    /// Concatenates matrices with equal column counts along the rows.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let cols = xs.first().map_or(0, |&v| self.value(v).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &v in xs {
            let t = self.value(v);
            if t.cols() != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column counts {} and {}", cols, t.cols()),
                ));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let ng = xs.iter().any(|&v| self.ng(v));
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatRows { xs: xs.to_vec() }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Reshape { x }, ng))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let out = self.value(x).select_rows(rows)?;
        let ng = self.ng(x);
        Ok(self.push(
            out,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    /// Columns `cols` of a matrix, in the given order.
    pub fn select_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(Error::OutOfRange {
                what: "columns",
                index: bad,
                len: c,
            });
        }
        let mut data = Vec::with_capacity(r * cols.len());
        for i in 0..r {
            let row = &xv.data()[i * c..(i + 1) * c];
            data.extend(cols.iter().map(|&j| row[j]));
        }
        let out = Tensor::new(vec![r, cols.len()], data)?;
        let ng = self.ng(x);
        Ok(self.push(
            out,
            Op::SelectCols {
                x,
                cols: cols.to_vec(),
            },
            ng,
        ))
    }

    /// Places column `j` of `x: [R×m]` into column `cols[j]` of an `[R×total]`
    /// zero matrix. Repeated targets add.
    pub fn scatter_cols(&mut self, x: Var, cols: &[usize], total: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, m) = (xv.rows(), xv.cols());
        if cols.len() != m {
            return Err(Error::shape(
                "scatter_cols",
                format!("{} columns, {} targets", m, cols.len()),
            ));
        }
        if let Some(&bad) = cols.iter().find(|&&j| j >= total) {
            return Err(Error::OutOfRange {
                what: "scatter target",
                index: bad,
                len: total,
            });
        }
        let mut data = vec![0.0; r * total];
        for i in 0..r {
            for (j, &t) in cols.iter().enumerate() {
                data[i * total + t] += xv.data()[i * m + j];
            }
        }
        let out = Tensor::new(vec![r, total], data)?;
        let ng = self.ng(x);
        Ok(self.push(
            out,
            Op::ScatterCols {
                x,
                cols: cols.to_vec(),
            },
            ng,
        ))
    }

    /// Row-wise abs-top-k with ℓ2 renormalization of the kept entries.
    ///
    /// The columns of `h: [T×(groups·n)]` are split into `groups` equal
    /// blocks and each block is sparsified independently. With `k == n` the
    /// op only normalizes. Dropped entries get exactly zero gradient; kept
    /// entries receive the exact Jacobian of the normalization.
    pub fn sparsify(&mut self, h: Var, k: usize, groups: usize) -> Result<Var> {
        let hv = self.value(h);
        let (t, cols) = (hv.rows(), hv.cols());
        if groups == 0 || cols % groups != 0 {
            return Err(Error::shape(
                "sparsify",
                format!("{cols} columns cannot split into {groups} groups"),
            ));
        }
        let n = cols / groups;
        if k == 0 || k > n {
            return Err(Error::invalid(format!("sparsity k={k} outside 1..={n}")));
        }
        let mut out = vec![0.0; t * cols];
        let mut kept = Vec::with_capacity(t * groups);
        let mut norms = Vec::with_capacity(t * groups);
        for r in 0..t {
            for g in 0..groups {
                let base = r * cols + g * n;
                let block = &hv.data()[base..base + n];
                let idx = abs_top_k(block, k);
                let norm = idx.iter().map(|&i| block[i] * block[i]).sum::<f64>().sqrt();
                if norm == 0.0 || !norm.is_finite() {
                    return Err(Error::DegenerateNorm);
                }
                for &i in &idx {
                    out[base + i] = block[i] / norm;
                }
                kept.push(idx);
                norms.push(norm);
            }
        }
        let out = Tensor::new(hv.shape().to_vec(), out)?;
        let ng = self.ng(h);
        Ok(self.push(out, Op::Sparsify { h, kept, norms }, ng))
    }

    /// Coefficient-of-variation penalty `Var(ā) / (mean(ā)² + eps)` over the
    /// column sums `ā` of `codes: [T×n]`, with population variance. With
    /// `abs` the column sums use `|α|`.
    pub fn cv_penalty(&mut self, codes: Var, abs: bool, eps: f64) -> Result<Var> {
        let cv = self.value(codes);
        if cv.is_empty() {
            return Err(Error::Empty("code batch"));
        }
        let bar = column_sums(cv, abs);
        let value = cv_of(&bar, eps);
        let ng = self.ng(codes);
        Ok(self.push(Tensor::scalar(value), Op::Cv { codes, abs, eps }, ng))
    }

    /// Weighted sums over consecutive row segments: for `x: [S·L × C]`,
    /// `out[s, c] = weights[s] · Σ_{q<L} x[s·L + q, c]`.
    pub fn segment_sum(&mut self, x: Var, seg_len: usize, weights: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.cols());
        let segs = weights.len();
        if seg_len == 0 || rows != segs * seg_len {
            return Err(Error::shape(
                "segment_sum",
                format!("{rows} rows for {segs} segments of {seg_len}"),
            ));
        }
        let mut out = vec![0.0; segs * c];
        for s in 0..segs {
            for q in 0..seg_len {
                let row = &xv.data()[(s * seg_len + q) * c..(s * seg_len + q + 1) * c];
                for (o, v) in out[s * c..(s + 1) * c].iter_mut().zip(row) {
                    *o += v;
                }
            }
            for o in &mut out[s * c..(s + 1) * c] {
                *o *= weights[s];
            }
        }
        let out = Tensor::new(vec![segs, c], out)?;
        let ng = self.ng(x);
        Ok(self.push(
            out,
            Op::SegmentSum {
                x,
                seg_len,
                weights: weights.to_vec(),
            },
            ng,
        ))
    }

    /// Bank of expert heads `out_j = sin(F·W1_j + b1_j)·W2_j + b2_j` applied to
    /// shared features `F: [B×width]` for the experts in `ids`.
    ///
    /// Parameters are stacked per expert: `w1: [n×width×hw]`, `b1: [n×hw]`,
    /// `w2: [n×hw×C]`, `b2: [n×C]`. The output is `[|ids|×B×C]`, one
    /// `B×C` block per requested expert, so a code row `α: [1×|ids|]`
    /// combines it with a single matmul after a reshape.
    pub fn head_bank(
        &mut self,
        feats: Var,
        w1: Var,
        b1: Var,
        w2: Var,
        b2: Var,
        ids: &[usize],
    ) -> Result<Var> {
        let fv = self.value(feats);
        let (bsz, width) = (fv.rows(), fv.cols());
        let w1v = self.value(w1);
        let w2v = self.value(w2);
        if w1v.shape().len() != 3 || w2v.shape().len() != 3 {
            return Err(Error::shape(
                "head_bank",
                format!("w1 {:?}, w2 {:?} must be rank 3", w1v.shape(), w2v.shape()),
            ));
        }
        let (n, hw, c) = (w1v.shape()[0], w1v.shape()[2], w2v.shape()[2]);
        if w1v.shape()[1] != width
            || w2v.shape()[0] != n
            || w2v.shape()[1] != hw
            || self.value(b1).shape() != [n, hw]
            || self.value(b2).shape() != [n, c]
        {
            return Err(Error::shape(
                "head_bank",
                format!(
                    "features {:?}, w1 {:?}, b1 {:?}, w2 {:?}, b2 {:?}",
                    fv.shape(),
                    w1v.shape(),
                    self.value(b1).shape(),
                    w2v.shape(),
                    self.value(b2).shape()
                ),
            ));
        }
        if let Some(&bad) = ids.iter().find(|&&j| j >= n) {
            return Err(Error::OutOfRange {
                what: "experts",
                index: bad,
                len: n,
            });
        }
        let (b1v, b2v) = (self.value(b1), self.value(b2));
        let mut z1 = vec![0.0; ids.len() * bsz * hw];
        let mut out = vec![0.0; ids.len() * bsz * c];
        let mut a1 = vec![0.0; bsz * hw];
        for (q, &j) in ids.iter().enumerate() {
            let z = &mut z1[q * bsz * hw..(q + 1) * bsz * hw];
            let bias1 = &b1v.data()[j * hw..(j + 1) * hw];
            for row in z.chunks_mut(hw) {
                row.copy_from_slice(bias1);
            }
            let w1j = &w1v.data()[j * width * hw..(j + 1) * width * hw];
            gemm(bsz, width, hw, fv.data(), false, w1j, false, z, 1.0);
            for (a, zi) in a1.iter_mut().zip(z.iter()) {
                *a = zi.sin();
            }
            let o = &mut out[q * bsz * c..(q + 1) * bsz * c];
            let bias2 = &b2v.data()[j * c..(j + 1) * c];
            for row in o.chunks_mut(c) {
                row.copy_from_slice(bias2);
            }
            let w2j = &w2v.data()[j * hw * c..(j + 1) * hw * c];
            gemm(bsz, hw, c, &a1, false, w2j, false, o, 1.0);
        }
        let out = Tensor::new(vec![ids.len(), bsz, c], out)?;
        check_finite("head_bank", &out)?;
        let ng = [feats, w1, b1, w2, b2].iter().any(|&v| self.ng(v));
        let cache = HeadBankCache {
            feats,
            w1,
            b1,
            w2,
            b2,
            ids: ids.to_vec(),
            z1,
        };
        Ok(self.push(out, Op::HeadBank(Box::new(cache)), ng))
    }

    /// Reverse pass from a scalar seed.
    pub fn backward(&self, seed: Var) -> Result<Gradients> {
        let seed_val = self.value(seed);
        if seed_val.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("seed must be scalar, has shape {:?}", seed_val.shape()),
            ));
        }
        let n = seed.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[seed.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        for g in grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("backward"));
            }
        }
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    /// Runs [`Tape::backward`] and adds the gradient of every bound
    /// parameter into `store`. Parameters in the store that the seed does
    /// not reach get a zero gradient.
    pub fn backward_into(&self, seed: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(seed)?;
        self.accumulate_into(&grads, store)?;
        Ok(grads)
    }

    /// Adds gradients of bound parameters into `store`; every other slot in
    /// the store is populated with zeros if it was empty. Bindings to names
    /// the store does not hold are skipped, so one tape can feed several
    /// stores.
    pub fn accumulate_into(&self, grads: &Gradients, store: &mut ParamStore) -> Result<()> {
        for (v, name) in &self.bindings {
            if !store.contains(name) {
                continue;
            }
            match grads.get_slice(*v) {
                Some(g) => store.accumulate_grad(name, g)?,
                None => {
                    let zeros = vec![0.0; self.value(*v).len()];
                    store.accumulate_grad(name, &zeros)?;
                }
            }
        }
        let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
        for name in names {
            if store.grad(&name).is_none() {
                let len = store.get(&name)?.len();
                store.accumulate_grad(&name, &vec![0.0; len])?;
            }
        }
        Ok(())
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        // Accumulates `f(i)` into the gradient buffer of `v`.
        fn acc(
            grads: &mut [Option<Vec<f64>>],
            nodes: &[Node],
            v: Var,
            f: impl FnOnce(&mut [f64]),
        ) {
            if !nodes[v.0].needs_grad {
                return;
            }
            let len = nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        }

        match &node.op {
            Op::Constant | Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                let (bsz, din, dout) = (xv.rows(), xv.cols(), wv.cols());
                acc(grads, nodes, *x, |dx| {
                    gemm(bsz, dout, din, g, false, wv.data(), true, dx, 1.0)
                });
                acc(grads, nodes, *w, |dw| {
                    gemm(din, bsz, dout, xv.data(), true, g, false, dw, 1.0)
                });
                acc(grads, nodes, *b, |db| {
                    for row in g.chunks(dout.max(1)) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                });
            }
            Op::MatMul { a, b } => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                acc(grads, nodes, *a, |da| {
                    gemm(m, n, k, g, false, bv.data(), true, da, 1.0)
                });
                acc(grads, nodes, *b, |db| {
                    gemm(k, m, n, av.data(), true, g, false, db, 1.0)
                });
            }
            Op::Sine { x, omega } => {
                let xv = &nodes[x.0].value;
                acc(grads, nodes, *x, |dx| {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv.data()) {
                        *d += gi * omega * (omega * xi).cos();
                    }
                });
            }
            Op::Add { a, b } => {
                acc(grads, nodes, *a, |d| add_into(d, g, 1.0));
                acc(grads, nodes, *b, |d| add_into(d, g, 1.0));
            }
            Op::Sub { a, b } => {
                acc(grads, nodes, *a, |d| add_into(d, g, 1.0));
                acc(grads, nodes, *b, |d| add_into(d, g, -1.0));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(grads, nodes, *a, |d| {
                    for ((d, gi), bi) in d.iter_mut().zip(g).zip(bv.data()) {
                        *d += gi * bi;
                    }
                });
                acc(grads, nodes, *b, |d| {
                    for ((d, gi), ai) in d.iter_mut().zip(g).zip(av.data()) {
                        *d += gi * ai;
                    }
                });
            }
            Op::Scale { x, c } => acc(grads, nodes, *x, |d| add_into(d, g, *c)),
            Op::AddBias { x, b } => {
                let n = nodes[b.0].value.len();
                acc(grads, nodes, *x, |d| add_into(d, g, 1.0));
                acc(grads, nodes, *b, |db| {
                    for row in g.chunks(n.max(1)) {
                        add_into(db, row, 1.0);
                    }
                });
            }
            Op::Sum { x } => acc(grads, nodes, *x, |d| d.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean { x } => {
                let len = nodes[x.0].value.len().max(1) as f64;
                acc(grads, nodes, *x, |d| d.iter_mut().for_each(|v| *v += g[0] / len));
            }
            Op::LossL2 { pred, target } => {
                let pv = &nodes[pred.0].value;
                let scale = 2.0 * g[0] / pv.len().max(1) as f64;
                acc(grads, nodes, *pred, |d| {
                    for ((d, p), t) in d.iter_mut().zip(pv.data()).zip(target) {
                        *d += scale * (p - t);
                    }
                });
            }
            Op::LossL1 { pred, target } => {
                let pv = &nodes[pred.0].value;
                let scale = g[0] / pv.len().max(1) as f64;
                acc(grads, nodes, *pred, |d| {
                    for ((d, p), t) in d.iter_mut().zip(pv.data()).zip(target) {
                        *d += scale * sign(p - t);
                    }
                });
            }
            Op::WeightedAbsSum { x, weights } => {
                let xv = &nodes[x.0].value;
                acc(grads, nodes, *x, |d| match weights {
                    Some(w) => {
                        for ((d, xi), wi) in d.iter_mut().zip(xv.data()).zip(w) {
                            *d += g[0] * wi * sign(*xi);
                        }
                    }
                    None => {
                        for (d, xi) in d.iter_mut().zip(xv.data()) {
                            *d += g[0] * sign(*xi);
                        }
                    }
                });
            }
            Op::Stack { xs } => {
                let per = node.value.cols();
                for (r, v) in xs.iter().enumerate() {
                    acc(grads, nodes, *v, |d| add_into(d, &g[r * per..(r + 1) * per], 1.0));
                }
            }
            Op::ConcatRows { xs } => {
                let mut off = 0;
                for v in xs {
                    let len = nodes[v.0].value.len();
                    acc(grads, nodes, *v, |d| add_into(d, &g[off..off + len], 1.0));
                    off += len;
                }
            }
            Op::Reshape { x } => acc(grads, nodes, *x, |d| add_into(d, g, 1.0)),
            Op::SelectRows { x, rows } => {
                let c = nodes[x.0].value.cols();
                acc(grads, nodes, *x, |d| {
                    for (r, &src) in rows.iter().enumerate() {
                        add_into(&mut d[src * c..(src + 1) * c], &g[r * c..(r + 1) * c], 1.0);
                    }
                });
            }
            Op::SelectCols { x, cols } => {
                let c = nodes[x.0].value.cols();
                let m = cols.len();
                acc(grads, nodes, *x, |d| {
                    for r in 0..node.value.rows() {
                        for (j, &src) in cols.iter().enumerate() {
                            d[r * c + src] += g[r * m + j];
                        }
                    }
                });
            }
            Op::ScatterCols { x, cols } => {
                let total = node.value.cols();
                let m = cols.len();
                acc(grads, nodes, *x, |d| {
                    for r in 0..node.value.rows() {
                        for (j, &t) in cols.iter().enumerate() {
                            d[r * m + j] += g[r * total + t];
                        }
                    }
                });
            }
            Op::Sparsify { h, kept, norms } => {
                let out = node.value.data();
                let cols = node.value.cols();
                let groups = kept.len() / node.value.rows().max(1);
                let n = cols / groups.max(1);
                acc(grads, nodes, *h, |d| {
                    for (slot, (idx, norm)) in kept.iter().zip(norms).enumerate() {
                        let (r, grp) = (slot / groups, slot % groups);
                        let base = r * cols + grp * n;
                        let dot: f64 = idx.iter().map(|&i| out[base + i] * g[base + i]).sum();
                        for &i in idx {
                            d[base + i] += (g[base + i] - out[base + i] * dot) / norm;
                        }
                    }
                });
            }
            Op::Cv { codes, abs, eps } => {
                let cv = &nodes[codes.0].value;
                let bar = column_sums(cv, *abs);
                let dbar = cv_grad(&bar, *eps);
                let n = bar.len();
                acc(grads, nodes, *codes, |d| {
                    for (i, (dv, a)) in d.iter_mut().zip(cv.data()).enumerate() {
                        let s = if *abs { sign(*a) } else { 1.0 };
                        *dv += g[0] * dbar[i % n] * s;
                    }
                });
            }
            Op::SegmentSum { x, seg_len, weights } => {
                let c = node.value.cols();
                acc(grads, nodes, *x, |d| {
                    for (s, w) in weights.iter().enumerate() {
                        let gs = &g[s * c..(s + 1) * c];
                        for q in 0..*seg_len {
                            let row = (s * seg_len + q) * c;
                            add_into(&mut d[row..row + c], gs, *w);
                        }
                    }
                });
            }
            Op::HeadBank(hb) => {
                let fv = &nodes[hb.feats.0].value;
                let w1v = &nodes[hb.w1.0].value;
                let w2v = &nodes[hb.w2.0].value;
                let (bsz, width) = (fv.rows(), fv.cols());
                let (hw, c) = (w1v.shape()[2], w2v.shape()[2]);
                let mut a1 = vec![0.0; bsz * hw];
                let mut dz = vec![0.0; bsz * hw];
                for (q, &j) in hb.ids.iter().enumerate() {
                    let z = &hb.z1[q * bsz * hw..(q + 1) * bsz * hw];
                    let gq = &g[q * bsz * c..(q + 1) * bsz * c];
                    for (a, zi) in a1.iter_mut().zip(z) {
                        *a = zi.sin();
                    }
                    let w1j = &w1v.data()[j * width * hw..(j + 1) * width * hw];
                    let w2j = &w2v.data()[j * hw * c..(j + 1) * hw * c];
                    acc(grads, nodes, hb.w2, |d| {
                        let dj = &mut d[j * hw * c..(j + 1) * hw * c];
                        gemm(hw, bsz, c, &a1, true, gq, false, dj, 1.0);
                    });
                    acc(grads, nodes, hb.b2, |d| {
                        let dj = &mut d[j * c..(j + 1) * c];
                        for row in gq.chunks(c) {
                            add_into(dj, row, 1.0);
                        }
                    });
                    gemm(bsz, c, hw, gq, false, w2j, true, &mut dz, 0.0);
                    for (d, zi) in dz.iter_mut().zip(z) {
                        *d *= zi.cos();
                    }
                    acc(grads, nodes, hb.w1, |d| {
                        let dj = &mut d[j * width * hw..(j + 1) * width * hw];
                        gemm(width, bsz, hw, fv.data(), true, &dz, false, dj, 1.0);
                    });
                    acc(grads, nodes, hb.b1, |d| {
                        let dj = &mut d[j * hw..(j + 1) * hw];
                        for row in dz.chunks(hw) {
                            add_into(dj, row, 1.0);
                        }
                    });
                    acc(grads, nodes, hb.feats, |d| {
                        gemm(bsz, hw, width, &dz, false, w1j, true, d, 1.0);
                    });
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

fn column_sums(codes: &Tensor, abs: bool) -> Vec<f64> {
    let n = codes.cols();
    let mut bar = vec![0.0; n];
    for row in codes.data().chunks(n.max(1)) {
        for (b, v) in bar.iter_mut().zip(row) {
            *b += if abs { v.abs() } else { *v };
        }
    }
    bar
}

pub(crate) fn cv_of(bar: &[f64], eps: f64) -> f64 {
    let n = bar.len() as f64;
    let mean = bar.iter().sum::<f64>() / n;
    let var = bar.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / n;
    var / (mean * mean + eps)
}

fn cv_grad(bar: &[f64], eps: f64) -> Vec<f64> {
    let n = bar.len() as f64;
    let mean = bar.iter().sum::<f64>() / n;
    let var = bar.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / n;
    let den = mean * mean + eps;
    bar.iter()
        .map(|b| (2.0 * (b - mean) / n) / den - var * (2.0 * mean / n) / (den * den))
        .collect()
}

/// Forward value of the affine map `x · W + b`.
pub fn affine_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.shape().len() != 2 || x.cols() != w.rows() || b.len() != w.cols() {
        return Err(Error::shape(
            "affine",
            format!(
                "x {:?}, W {:?}, b {:?}",
                x.shape(),
                w.shape(),
                b.shape()
            ),
        ));
    }
    let (bsz, din, dout) = (x.rows(), x.cols(), w.cols());
    let mut out = Vec::with_capacity(bsz * dout);
    for _ in 0..bsz {
        out.extend_from_slice(b.data());
    }
    gemm(bsz, din, dout, x.data(), false, w.data(), false, &mut out, 1.0);
    Tensor::new(vec![bsz, dout], out)
}

/// Forward value of elementwise `sin(omega · x)`.
pub fn sine_forward(x: &Tensor, omega: f64) -> Result<Tensor> {
    check_finite("sine", x)?;
    let data = x.data().iter().map(|v| (omega * v).sin()).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Mean squared difference.
pub fn loss_l2(pred: &Tensor, target: &Tensor) -> Result<f64> {
    same_shape("loss_l2", pred, target)?;
    let n = pred.len().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Mean absolute difference.
pub fn loss_l1(pred: &Tensor, target: &Tensor) -> Result<f64> {
    same_shape("loss_l1", pred, target)?;
    let n = pred.len().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n)
}
