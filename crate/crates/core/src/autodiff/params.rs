use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor3,
    pub grad: Tensor3,
}

/// Named trainable tensors with paired gradient buffers. Iteration is in
/// lexicographic name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers (or replaces) a parameter and zeroes its gradient.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor3) {
        let (d1, d2, d3) = value.dims();
        self.params.insert(
            name.into(),
            Param {
                value,
                grad: Tensor3::zeros(d1, d2, d3),
            },
        );
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor3> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Contract(format!("no parameter named `{name}`")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor3> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Contract(format!("no parameter named `{name}`")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor3> {
        self.params
            .get(name)
            .map(|p| &p.grad)
            .ok_or_else(|| Error::Contract(format!("no parameter named `{name}`")))
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_entries(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, name: &str, g: &[f64]) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
        if p.grad.len() != g.len() {
            return Err(Error::shape(format!(
                "gradient length mismatch for `{name}`"
            )));
        }
        for (a, b) in p.grad.data_mut().iter_mut().zip(g) {
            *a += b;
        }
        Ok(())
    }

    /// Sum of squared entries over every parameter.
    pub fn sum_squares(&self) -> f64 {
        self.params.values().map(|p| p.value.sum_squares()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grads_follow_value_shape_and_reset() {
        let mut store = ParamStore::new();
        store.insert("b", Tensor3::zeros(2, 3, 1));
        store.insert("a", Tensor3::zeros(1, 1, 4));
        assert_eq!(store.names().collect::<Vec<_>>(), vec!["a", "b"]);
        store.accumulate_grad("b", &[1.0; 6]).unwrap();
        store.accumulate_grad("b", &[1.0; 6]).unwrap();
        assert_eq!(store.grad("b").unwrap().data(), &[2.0; 6]);
        assert_eq!(store.grad("b").unwrap().dims(), (2, 3, 1));
        store.zero_grads();
        assert!(store.grad("b").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(store.accumulate_grad("a", &[1.0]).is_err());
        assert!(store.get("missing").is_err());
    }
}
