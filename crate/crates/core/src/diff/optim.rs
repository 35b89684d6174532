use alloc::collections::BTreeMap;

use crate::diff::params::ParamStore;
use crate::prelude::*;
use crate::{Error, Result, Tensor};

/// Adam with bias correction.
///
/// Parameters whose name starts with a registered prefix use that group's
/// learning rate; the longest matching prefix wins.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    groups: Vec<(String, f64)>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            groups: Vec::new(),
        }
    }

    /// Learning rate for parameters named `prefix…`.
    pub fn with_group(mut self, prefix: impl Into<String>, lr: f64) -> Self {
        self.groups.push((prefix.into(), lr));
        self
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Multiplies every learning rate (base and groups) by `factor`.
    pub fn scale_lr(&mut self, factor: f64) {
        self.lr *= factor;
        for g in &mut self.groups {
            g.1 *= factor;
        }
    }

    fn lr_for(&self, name: &str) -> f64 {
        self.groups
            .iter()
            .filter(|(p, _)| name.starts_with(p.as_str()))
            .max_by_key(|(p, _)| p.len())
            .map_or(self.lr, |(_, lr)| *lr)
    }

    /// One update over every parameter in `store`; gradients are zeroed
    /// afterwards. Fails without touching anything if a slot is empty.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
        if let Some(missing) = names.iter().find(|n| store.grad(n).is_none()) {
            return Err(Error::MissingGradient(missing.clone()));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for name in names {
            let lr = self.lr_for(&name);
            let g = store.take_grad(&name).expect("checked above");
            let shape = g.shape().to_vec();
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(&shape));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(&shape));
            let p = store.get_mut(&name)?;
            for (((pi, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

/// Plain gradient descent with optional heavy-ball momentum.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Tensor>,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            momentum: 0.0,
            velocity: BTreeMap::new(),
        }
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
        if let Some(missing) = names.iter().find(|n| store.grad(n).is_none()) {
            return Err(Error::MissingGradient(missing.clone()));
        }
        for name in names {
            let g = store.take_grad(&name).expect("checked above");
            let vel = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let p = store.get_mut(&name)?;
            for ((pi, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(vel.data_mut()) {
                *vi = self.momentum * *vi + gi;
                *pi -= self.lr * *vi;
            }
        }
        store.zero_grads();
        Ok(())
    }
}

/// Either optimizer behind one interface.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd(Sgd),
}

impl Optimizer {
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(store),
            Optimizer::Sgd(s) => s.step(store),
        }
    }

    pub fn scale_lr(&mut self, factor: f64) {
        match self {
            Optimizer::Adam(a) => a.scale_lr(factor),
            Optimizer::Sgd(s) => s.lr *= factor,
        }
    }
}
