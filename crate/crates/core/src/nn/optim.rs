use serde::{Deserialize, Serialize};

use super::param::ParamStore;
use crate::error::{Error, Result};

/// Adaptive-moment (Adam) hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter moment accumulators for [`AdamConfig`].
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently held by `store`.
    ///
    /// Every gradient is checked before any value changes, so a non-finite
    /// gradient leaves the parameters untouched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.first.len() != store.len() {
            return Err(Error::usage(
                "optimizer state was built for a different parameter set",
            ));
        }
        for t in store.iter() {
            if let Some(pos) = t.grad().iter().position(|g| !g.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite gradient {} in parameter {} at flat index {pos}",
                    t.grad()[pos],
                    t.name()
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);

        for ((tensor, m), v) in store
            .iter_mut()
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let (values, grad) = tensor.values_and_grad_mut();
            for i in 0..values.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                values[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::ParamTensor;

    fn single(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.push(ParamTensor::new("w", vec![1], vec![w]).unwrap());
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = single(1.5);
        let mut opt = OptimizerState::new(&store, AdamConfig::default());
        opt.step(&mut store).unwrap();
        assert_eq!(store.iter().next().unwrap().values(), &[1.5]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let mut store = single(1.5);
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        let mut opt = OptimizerState::new(&store, cfg);
        for _ in 0..10 {
            store.iter_mut().next().unwrap().grad_mut()[0] = 3.0;
            opt.step(&mut store).unwrap();
        }
        assert_eq!(store.iter().next().unwrap().values(), &[1.5]);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(w) = (w - 2)^2, gradient 2(w - 2).
        let mut store = single(0.0);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut opt = OptimizerState::new(&store, cfg);
        for _ in 0..200 {
            let w = store.iter().next().unwrap().values()[0];
            store.iter_mut().next().unwrap().grad_mut()[0] = 2.0 * (w - 2.0);
            opt.step(&mut store).unwrap();
        }
        let w = store.iter().next().unwrap().values()[0];
        assert!((w - 2.0).abs() < 1e-2, "w = {w}");
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut store = single(1.0);
        store.iter_mut().next().unwrap().grad_mut()[0] = f64::NAN;
        let mut opt = OptimizerState::new(&store, AdamConfig::default());
        match opt.step(&mut store) {
            Err(Error::Numeric(msg)) => assert!(msg.contains('w')),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(store.iter().next().unwrap().values(), &[1.0]);
        assert_eq!(opt.steps(), 0);
    }
}
