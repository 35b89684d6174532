//! Sinusoidal coordinate networks.
//!
//! A trunk is a positional embedding `γ(x) = sin(ω0·(W x + b))` followed by
//! `layers` hidden layers `sin(W h + b)`. Expert heads read the trunk
//! features and own two private layers: `affine → sine` to the head width,
//! then a linear map to the `C` signal channels.
//!
//! Parameters live in a [`ParamStore`] under a caller-chosen prefix:
//!
//! | name              | shape                     |
//! |-------------------|---------------------------|
//! | `embed.w`         | `m × n_freq`              |
//! | `embed.b`         | `n_freq`                  |
//! | `trunk.{l}.w`     | `fan_in × width`          |
//! | `trunk.{l}.b`     | `width`                   |
//! | `head.w1`         | `n × width × head_width`  |
//! | `head.b1`         | `n × head_width`          |
//! | `head.w2`         | `n × head_width × C`      |
//! | `head.b2`         | `n × C`                   |
//!
//! Head tensors are stacked along the expert axis; expert `j` owns slice `j`
//! of each of them and no other parameter.

use serde::{Deserialize, Serialize};

use crate::diff::{affine_forward, sine_forward, ParamStore, Tape, Var};
use crate::prelude::*;
use crate::rng::{self, Rng};
use crate::{Error, Result, Tensor};

/// Layer sizes of a trunk with its heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Coordinate dimension.
    pub m: usize,
    pub n_freq: usize,
    pub width: usize,
    /// Hidden layers after the embedding.
    pub layers: usize,
    pub head_width: usize,
    /// Signal channels.
    pub channels: usize,
    pub omega0: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            m: 2,
            n_freq: 64,
            width: 64,
            layers: 4,
            head_width: 32,
            channels: 3,
            omega0: 30.0,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n_freq == 0 || self.width == 0 || self.head_width == 0 {
            return Err(Error::invalid("network dimensions must be positive"));
        }
        if self.channels == 0 {
            return Err(Error::invalid("channel count must be positive"));
        }
        if !(self.omega0 > 0.0) {
            return Err(Error::invalid(format!("omega0 must be > 0, got {}", self.omega0)));
        }
        Ok(())
    }

    /// Width of the features handed to the heads.
    pub fn trunk_out(&self) -> usize {
        if self.layers == 0 {
            self.n_freq
        } else {
            self.width
        }
    }

    pub fn trunk_params(&self) -> usize {
        let mut total = self.m * self.n_freq + self.n_freq;
        let mut fan_in = self.n_freq;
        for _ in 0..self.layers {
            total += fan_in * self.width + self.width;
            fan_in = self.width;
        }
        total
    }

    pub fn head_params(&self) -> usize {
        let (w, h, c) = (self.trunk_out(), self.head_width, self.channels);
        w * h + h + h * c + c
    }

    /// Trunk plus `n` heads.
    pub fn param_count(&self, n: usize) -> usize {
        self.trunk_params() + n * self.head_params()
    }
}

pub(crate) fn pname(prefix: &str, name: &str) -> String {
    let mut s = String::with_capacity(prefix.len() + name.len());
    s.push_str(prefix);
    s.push_str(name);
    s
}

fn uniform_tensor(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng::uniform(rng, -bound, bound);
    }
    t
}

/// Fresh trunk and `n` heads under `prefix`.
///
/// Hidden and head weights are uniform in `±sqrt(6/fan_in)`. Embedding
/// frequencies are uniform in `±1/m` and get their `ω0` scale inside the
/// sine, so the first layer is the only one running at frequency `ω0`.
/// Biases are uniform in `±1/sqrt(fan_in)`.
pub fn init_network(arch: &Architecture, n: usize, seed: u64, prefix: &str) -> Result<ParamStore> {
    arch.validate()?;
    if n == 0 {
        return Err(Error::invalid("a dictionary needs at least one expert"));
    }
    let mut rng = rng::seeded(seed);
    let mut store = ParamStore::new();
    let m = arch.m as f64;
    store.insert(
        pname(prefix, "embed.w"),
        uniform_tensor(&mut rng, &[arch.m, arch.n_freq], 1.0 / m),
    )?;
    store.insert(
        pname(prefix, "embed.b"),
        uniform_tensor(&mut rng, &[arch.n_freq], 1.0 / m),
    )?;
    let mut fan_in = arch.n_freq;
    for l in 0..arch.layers {
        let bound = (6.0 / fan_in as f64).sqrt();
        store.insert(
            pname(prefix, &format!("trunk.{l}.w")),
            uniform_tensor(&mut rng, &[fan_in, arch.width], bound),
        )?;
        store.insert(
            pname(prefix, &format!("trunk.{l}.b")),
            uniform_tensor(&mut rng, &[arch.width], 1.0 / (fan_in as f64).sqrt()),
        )?;
        fan_in = arch.width;
    }
    let (w, h, c) = (arch.trunk_out(), arch.head_width, arch.channels);
    let b1 = (6.0 / w as f64).sqrt();
    let b2 = (6.0 / h as f64).sqrt();
    store.insert(pname(prefix, "head.w1"), uniform_tensor(&mut rng, &[n, w, h], b1))?;
    store.insert(
        pname(prefix, "head.b1"),
        uniform_tensor(&mut rng, &[n, h], 1.0 / (w as f64).sqrt()),
    )?;
    store.insert(pname(prefix, "head.w2"), uniform_tensor(&mut rng, &[n, h, c], b2))?;
    store.insert(
        pname(prefix, "head.b2"),
        uniform_tensor(&mut rng, &[n, c], 1.0 / (h as f64).sqrt()),
    )?;
    Ok(store)
}

/// Records the trunk on `tape`; returns features `[B × trunk_out]`.
pub fn trunk_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    arch: &Architecture,
    x: Var,
) -> Result<Var> {
    let w = tape.param(store, &pname(prefix, "embed.w"))?;
    let b = tape.param(store, &pname(prefix, "embed.b"))?;
    let z = tape.affine(x, w, b)?;
    let mut h = tape.sine(z, arch.omega0)?;
    for l in 0..arch.layers {
        let w = tape.param(store, &pname(prefix, &format!("trunk.{l}.w")))?;
        let b = tape.param(store, &pname(prefix, &format!("trunk.{l}.b")))?;
        let z = tape.affine(h, w, b)?;
        h = tape.sine(z, 1.0)?;
    }
    Ok(h)
}

/// Records the heads `ids` on shared trunk features; returns `[|ids| × B × C]`.
pub fn heads_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    feats: Var,
    ids: &[usize],
) -> Result<Var> {
    let w1 = tape.param(store, &pname(prefix, "head.w1"))?;
    let b1 = tape.param(store, &pname(prefix, "head.b1"))?;
    let w2 = tape.param(store, &pname(prefix, "head.w2"))?;
    let b2 = tape.param(store, &pname(prefix, "head.b2"))?;
    tape.head_bank(feats, w1, b1, w2, b2, ids)
}

/// Basis values `b_j(x)` for the experts in `ids`, as `[B × |ids| × C]`.
/// The trunk runs once for the whole batch.
pub fn eval_basis(
    store: &ParamStore,
    prefix: &str,
    arch: &Architecture,
    ids: &[usize],
    x: &Tensor,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let feats = trunk_on_tape(&mut tape, store, prefix, arch, xv)?;
    let out = heads_on_tape(&mut tape, store, prefix, feats, ids)?;
    let bank = tape.value(out);
    let (j, b, c) = (ids.len(), x.rows(), arch.channels);
    let mut data = vec![0.0; b * j * c];
    for q in 0..j {
        for r in 0..b {
            let src = &bank.data()[(q * b + r) * c..(q * b + r + 1) * c];
            data[(r * j + q) * c..(r * j + q + 1) * c].copy_from_slice(src);
        }
    }
    Tensor::new(vec![b, j, c], data)
}

/// `γ(x)[r, i] = sin(ω0 · (w_i·x_r + b_i))`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalEmbedding {
    /// Rows are the frequency vectors `w_i`, `[n_freq × m]`.
    pub w: Tensor,
    pub b: Tensor,
    pub omega0: f64,
}

impl PositionalEmbedding {
    pub fn new(w: Tensor, b: Tensor, omega0: f64) -> Result<Self> {
        if w.shape().len() != 2 || w.rows() == 0 || b.len() != w.rows() {
            return Err(Error::shape(
                "embedding",
                format!("W {:?}, b {:?}", w.shape(), b.shape()),
            ));
        }
        if !(omega0 > 0.0) {
            return Err(Error::invalid("omega0 must be > 0"));
        }
        Ok(Self { w, b, omega0 })
    }

    pub fn n_freq(&self) -> usize {
        self.w.rows()
    }

    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let (nf, m) = (self.w.rows(), self.w.cols());
        if x.cols() != m {
            return Err(Error::shape(
                "embed",
                format!("x {:?} against W {:?}", x.shape(), self.w.shape()),
            ));
        }
        let mut wt = vec![0.0; m * nf];
        for i in 0..nf {
            for d in 0..m {
                wt[d * nf + i] = self.w.data()[i * m + d];
            }
        }
        let z = affine_forward(x, &Tensor::new(vec![m, nf], wt)?, &self.b)?;
        sine_forward(&z, self.omega0)
    }
}

/// `f(x) = αᵀ γ(x) + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayerSiren {
    pub embedding: PositionalEmbedding,
    pub alpha: Vec<f64>,
    pub c: f64,
}

impl TwoLayerSiren {
    /// Random model with `n_freq` terms; frequencies uniform in `±1/m`.
    pub fn random(m: usize, n_freq: usize, omega0: f64, seed: u64) -> Result<Self> {
        let mut rng = rng::seeded(seed);
        let bound = 1.0 / m as f64;
        let w = uniform_tensor(&mut rng, &[n_freq, m], bound);
        let b = uniform_tensor(&mut rng, &[n_freq], bound);
        let alpha = (0..n_freq).map(|_| rng::uniform(&mut rng, -1.0, 1.0)).collect();
        let c = rng::uniform(&mut rng, -1.0, 1.0);
        Ok(Self {
            embedding: PositionalEmbedding::new(w, b, omega0)?,
            alpha,
            c,
        })
    }

    pub fn eval(&self, x: &Tensor) -> Result<Vec<f64>> {
        if self.alpha.len() != self.embedding.n_freq() {
            return Err(Error::shape(
                "two_layer",
                format!(
                    "{} coefficients for {} frequencies",
                    self.alpha.len(),
                    self.embedding.n_freq()
                ),
            ));
        }
        let g = self.embedding.embed(x)?;
        let nf = self.alpha.len();
        Ok(g
            .data()
            .chunks(nf.max(1))
            .map(|row| row.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>() + self.c)
            .collect())
    }
}
