use alloc::collections::BTreeMap;

use crate::prelude::*;
use crate::{Error, Result, Tensor};

/// Named trainable parameters with a gradient slot per parameter.
///
/// A gradient slot is empty until a backward pass (or [`zero_grads`])
/// populates it; optimizers refuse to step over empty slots.
///
/// [`zero_grads`]: ParamStore::zero_grads
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    grads: BTreeMap<String, Option<Tensor>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        self.grads.insert(name.clone(), None);
        self.params.insert(name, value);
        Ok(())
    }

    /// Insert or overwrite; the gradient slot is cleared.
    pub fn set(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        self.grads.insert(name.clone(), None);
        self.params.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name).and_then(|g| g.as_ref())
    }

    /// Adds `delta` into the gradient slot of `name`, creating it if empty.
    pub fn accumulate_grad(&mut self, name: &str, delta: &[f64]) -> Result<()> {
        let param = self
            .params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if param.len() != delta.len() {
            return Err(Error::shape(
                "accumulate_grad",
                format!("`{name}` has {} entries, gradient {}", param.len(), delta.len()),
            ));
        }
        let slot = self.grads.entry(name.to_string()).or_insert(None);
        match slot {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => {
                *slot = Some(Tensor::new(param.shape().to_vec(), delta.to_vec())?);
            }
        }
        Ok(())
    }

    /// Populates every gradient slot with zeros.
    pub fn zero_grads(&mut self) {
        for (name, p) in &self.params {
            self.grads.insert(name.clone(), Some(Tensor::zeros(p.shape())));
        }
    }

    /// Empties every gradient slot.
    pub fn clear_grads(&mut self) {
        for g in self.grads.values_mut() {
            *g = None;
        }
    }

    pub(crate) fn take_grad(&mut self, name: &str) -> Option<Tensor> {
        self.grads.get_mut(name).and_then(|g| g.take())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Order-sensitive FNV-1a hash over names and the raw bits of every value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, t) in &self.params {
            feed(name.as_bytes());
            for v in t.data() {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn gradient_shape_follows_parameter() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(&[2, 3])).unwrap();
        assert!(s.grad("w").is_none());
        s.accumulate_grad("w", &[1.0; 6]).unwrap();
        s.accumulate_grad("w", &[1.0; 6]).unwrap();
        let g = s.grad("w").unwrap();
        assert_eq!(g.shape(), &[2, 3]);
        assert!(g.data().iter().all(|&v| v == 2.0));
        assert!(s.accumulate_grad("w", &[1.0; 5]).is_err());
    }

    #[test]
    fn checksum_sees_single_bit_changes() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let before = s.checksum();
        s.get_mut("a").unwrap().data_mut()[1] = f64::from_bits(2.0f64.to_bits() + 1);
        assert_ne!(before, s.checksum());
    }
}
