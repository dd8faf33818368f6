use std::collections::BTreeMap;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam over every parameter of a store, visited in name
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently held in `store`.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for (name, p) in store.iter() {
            if p.grad.data().iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient for `{name}`")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (name, p) in store.iter_mut() {
            let n = p.value.len();
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let grads = p.grad.data().to_vec();
            for (k, (x, g)) in p.value.data_mut().iter_mut().zip(&grads).enumerate() {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor3;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor3::scalar(v));
        s
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = scalar_store(1.5);
        let mut adam = Adam::new(0.1);
        for _ in 0..5 {
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.get("x").unwrap().data(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(0.0);
        s.param_mut("x").unwrap().grad.data_mut()[0] = 1.0;
        let mut adam = Adam::new(0.1);
        adam.step(&mut s).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((s.get("x").unwrap().data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut s = scalar_store(0.0);
        s.param_mut("x").unwrap().grad.data_mut()[0] = f64::NAN;
        let err = Adam::new(0.1).step(&mut s).unwrap_err();
        assert!(err.to_string().contains("`x`"));
        assert_eq!(s.get("x").unwrap().data(), &[0.0]);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let run = || {
            let mut s = scalar_store(0.3);
            let mut adam = Adam::new(0.01);
            for k in 0..10 {
                s.param_mut("x").unwrap().grad.data_mut()[0] = (k as f64).cos();
                adam.step(&mut s).unwrap();
            }
            s
        };
        assert_eq!(run(), run());
    }
}
