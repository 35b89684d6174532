//! Raw gate producers and the warm-up schedule.

use serde::{Deserialize, Serialize};

use crate::coordnet::pname;
use crate::diff::{affine_forward, sine_forward, ParamStore, Tape, Var};
use crate::prelude::*;
use crate::rng;
use crate::{Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GatingMode {
    /// Dense normalized combination with an ℓ1 penalty.
    DenseL1,
    /// Top-k sparsification with the CV penalty.
    HardTopK,
}

/// `DenseL1` while `epoch < warmup_epochs`.
pub fn gating_mode(epoch: usize, warmup_epochs: usize) -> GatingMode {
    if epoch < warmup_epochs {
        GatingMode::DenseL1
    } else {
        GatingMode::HardTopK
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    Table,
    Encoder,
}

impl GateKind {
    pub fn tag(self) -> u32 {
        match self {
            GateKind::Table => 0,
            GateKind::Encoder => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(GateKind::Table),
            1 => Some(GateKind::Encoder),
            _ => None,
        }
    }
}

/// What a gate is queried with.
#[derive(Clone, Copy, Debug)]
pub enum GateInput<'a> {
    Instance(usize),
    Summary(&'a [f64]),
}

/// Trainable gating network.
///
/// A table gate owns `gate.table: [T × n]`. An encoder gate is a sine MLP
/// `summary → hidden… → n` with parameters `gate.enc.{l}.w`/`.b`; with no
/// hidden layers it is a single affine map.
#[derive(Clone, Debug)]
pub struct Gate {
    pub kind: GateKind,
    /// Gate width (experts times patches).
    pub n: usize,
    /// Table rows, or the encoder input width.
    pub input: usize,
    pub hidden: Vec<usize>,
    pub params: ParamStore,
}

pub const TABLE: &str = "gate.table";

impl Gate {
    /// Table with rows drawn from N(0, 1).
    pub fn table(rows: usize, n: usize, seed: u64) -> Result<Self> {
        if rows == 0 || n == 0 {
            return Err(Error::invalid("gate table needs rows and experts"));
        }
        let mut r = rng::seeded(seed);
        let data = (0..rows * n).map(|_| rng::normal(&mut r)).collect();
        let mut params = ParamStore::new();
        params.insert(TABLE, Tensor::new(vec![rows, n], data)?)?;
        Ok(Self {
            kind: GateKind::Table,
            n,
            input: rows,
            hidden: Vec::new(),
            params,
        })
    }

    /// Encoder with sine hidden layers, uniform `±sqrt(6/fan_in)` weights and
    /// zero biases.
    pub fn encoder(input: usize, hidden: &[usize], n: usize, seed: u64) -> Result<Self> {
        if input == 0 || n == 0 || hidden.contains(&0) {
            return Err(Error::invalid("encoder dimensions must be positive"));
        }
        let mut r = rng::seeded(seed);
        let mut params = ParamStore::new();
        let mut fan_in = input;
        for (l, &out) in hidden.iter().chain(core::iter::once(&n)).enumerate() {
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = (0..fan_in * out)
                .map(|_| rng::uniform(&mut r, -bound, bound))
                .collect();
            params.insert(format!("gate.enc.{l}.w"), Tensor::new(vec![fan_in, out], w)?)?;
            params.insert(format!("gate.enc.{l}.b"), Tensor::zeros(&[out]))?;
            fan_in = out;
        }
        Ok(Self {
            kind: GateKind::Encoder,
            n,
            input,
            hidden: hidden.to_vec(),
            params,
        })
    }

    fn layers(&self) -> usize {
        self.hidden.len() + 1
    }

    /// Raw gates for one query.
    pub fn raw_gates(&self, q: GateInput<'_>) -> Result<Vec<f64>> {
        match (self.kind, q) {
            (GateKind::Table, GateInput::Instance(i)) => {
                let t = self.params.get(TABLE)?;
                if i >= t.rows() {
                    return Err(Error::OutOfRange {
                        what: "gate table",
                        index: i,
                        len: t.rows(),
                    });
                }
                Ok(t.data()[i * self.n..(i + 1) * self.n].to_vec())
            }
            (GateKind::Encoder, GateInput::Summary(s)) => {
                let x = Tensor::new(vec![1, s.len()], s.to_vec())?;
                Ok(self.encode(&x)?.into_data())
            }
            _ => Err(Error::invalid("gate queried with the wrong input kind")),
        }
    }

    /// Encoder output for a batch of summaries `[I × input]`.
    pub fn encode(&self, summaries: &Tensor) -> Result<Tensor> {
        if self.kind != GateKind::Encoder {
            return Err(Error::invalid("table gates have no encoder"));
        }
        if summaries.cols() != self.input {
            return Err(Error::shape(
                "encoder",
                format!("summary width {} but encoder expects {}", summaries.cols(), self.input),
            ));
        }
        let mut h = summaries.clone();
        for l in 0..self.layers() {
            let w = self.params.get(&format!("gate.enc.{l}.w"))?;
            let b = self.params.get(&format!("gate.enc.{l}.b"))?;
            h = affine_forward(&h, w, b)?;
            if l + 1 < self.layers() {
                h = sine_forward(&h, 1.0)?;
            }
        }
        Ok(h)
    }

    /// Raw gates `[I × n]` for table rows `ids`.
    pub fn table_on_tape(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var> {
        let t = tape.param(&self.params, TABLE)?;
        tape.select_rows(t, ids)
    }

    /// Raw gates `[I × n]` for summaries `[I × input]`.
    pub fn encoder_on_tape(&self, tape: &mut Tape, summaries: &Tensor) -> Result<Var> {
        let mut h = tape.constant(summaries.clone());
        for l in 0..self.layers() {
            let w = tape.param(&self.params, &pname("gate.enc.", &format!("{l}.w")))?;
            let b = tape.param(&self.params, &pname("gate.enc.", &format!("{l}.b")))?;
            h = tape.affine(h, w, b)?;
            if l + 1 < self.layers() {
                h = tape.sine(h, 1.0)?;
            }
        }
        Ok(h)
    }

    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        assert_eq!(gating_mode(0, 10), GatingMode::DenseL1);
        assert_eq!(gating_mode(9, 10), GatingMode::DenseL1);
        assert_eq!(gating_mode(10, 10), GatingMode::HardTopK);
        assert_eq!(gating_mode(0, 0), GatingMode::HardTopK);
    }

    #[test]
    fn table_returns_rows() {
        let mut g = Gate::table(3, 3, 1).unwrap();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        *g.params.get_mut(TABLE).unwrap() = eye;
        assert_eq!(g.raw_gates(GateInput::Instance(1)).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(matches!(
            g.raw_gates(GateInput::Instance(3)),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn zero_encoder_gives_zero_gates() {
        let mut g = Gate::encoder(4, &[5], 3, 2).unwrap();
        for (name, _) in g.params.clone().iter() {
            g.params.get_mut(name).unwrap().fill(0.0);
        }
        let out = g.raw_gates(GateInput::Summary(&[0.1, 0.2, 0.3, 0.4])).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn single_layer_encoder_is_affine() {
        let g = Gate::encoder(2, &[], 3, 7).unwrap();
        let s = [0.5, -1.5];
        let w = g.params.get("gate.enc.0.w").unwrap();
        let out = g.raw_gates(GateInput::Summary(&s)).unwrap();
        for (c, o) in out.iter().enumerate() {
            let oracle = s[0] * w.at2(0, c) + s[1] * w.at2(1, c);
            assert!((o - oracle).abs() < 1e-12);
        }
        let mut tape = Tape::new();
        let v = g
            .encoder_on_tape(&mut tape, &Tensor::from_rows(&[&s]))
            .unwrap();
        assert_eq!(tape.value(v).data(), out.as_slice());
    }
}
