use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const RMSPROP_DECAY: f64 = 0.99;
const EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
    RmsProp,
}

/// Moment accumulators for one [`ParamStore`].
///
/// Weight decay is decoupled: parameters shrink by `lr * weight_decay * p`
/// before the adaptive step, independent of the gradient statistics.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, weight_decay: f64, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape()))
            .collect();
        OptimizerState {
            kind,
            learning_rate,
            weight_decay,
            step: 0,
            first: if kind == OptimizerKind::Adam { zeros.clone() } else { Vec::new() },
            second: zeros,
        }
    }

    pub fn adam(learning_rate: f64, weight_decay: f64, store: &ParamStore) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate, weight_decay, store)
    }

    pub fn rmsprop(learning_rate: f64, weight_decay: f64, store: &ParamStore) -> Self {
        Self::new(OptimizerKind::RmsProp, learning_rate, weight_decay, store)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the store's gradient slots, then clears them.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.second.len() != store.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, store has {}",
                self.second.len(),
                store.len()
            )));
        }
        for id in store.ids() {
            if store.grad(id).is_none() {
                return Err(Error::argument(format!(
                    "missing gradient for parameter {}",
                    store.name(id)
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let lr = self.learning_rate;
        let decay = 1.0 - lr * self.weight_decay;
        for id in store.ids() {
            let grad = store.grad(id).cloned().expect("checked above");
            let i = id.index();
            let value = store.value_mut(id);
            if self.second[i].len() != value.len() {
                return Err(Error::shape(format!("accumulator shape mismatch at {i}")));
            }
            match self.kind {
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - ADAM_BETA1.powi(t);
                    let bc2 = 1.0 - ADAM_BETA2.powi(t);
                    let m = self.first[i].values_mut();
                    let v = self.second[i].values_mut();
                    for (((p, &g), m), v) in value
                        .values_mut()
                        .iter_mut()
                        .zip(grad.values())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *p = *p * decay - lr * m_hat / (v_hat.sqrt() + EPS);
                    }
                }
                OptimizerKind::RmsProp => {
                    let v = self.second[i].values_mut();
                    for ((p, &g), v) in value.values_mut().iter_mut().zip(grad.values()).zip(v.iter_mut()) {
                        *v = RMSPROP_DECAY * *v + (1.0 - RMSPROP_DECAY) * g * g;
                        *p = *p * decay - lr * g / (v.sqrt() + EPS);
                    }
                }
            }
        }
        store.zero_grad();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64, g: Option<f64>) -> (ParamStore, super::super::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(x));
        if let Some(g) = g {
            store.accumulate_grad(id, &Tensor::scalar(g)).unwrap();
        }
        (store, id)
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        for kind in [OptimizerKind::Adam, OptimizerKind::RmsProp] {
            let mut store = ParamStore::new();
            let id = store.add("w", Tensor::row(vec![0.3, -1.2, 4.0]));
            let before = store.value(id).clone();
            let mut opt = OptimizerState::new(kind, 1e-2, 0.0, &store);
            for _ in 0..5 {
                store.accumulate_grad(id, &Tensor::zeros(&[1, 3])).unwrap();
                opt.step(&mut store).unwrap();
            }
            assert_eq!(store.value(id), &before);
            assert_eq!(opt.steps(), 5);
        }
    }

    #[test]
    fn adam_first_step() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let (mut store, id) = scalar_store(0.5, Some(1.0));
        let mut opt = OptimizerState::adam(1e-4, 0.0, &store);
        opt.step(&mut store).unwrap();
        let expected = 0.5 - 1e-4 / (1.0 + 1e-8);
        assert!((store.value(id).item().unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_first_step() {
        // v = 0.01 g^2, step = lr * g / (sqrt(v) + eps) = lr / (0.1 + eps).
        let (mut store, id) = scalar_store(0.5, Some(1.0));
        let mut opt = OptimizerState::rmsprop(1e-4, 0.0, &store);
        opt.step(&mut store).unwrap();
        let expected = 0.5 - 1e-4 / (0.1 + 1e-8);
        assert!((store.value(id).item().unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn decoupled_weight_decay() {
        let (mut store, id) = scalar_store(2.0, Some(0.0));
        let mut opt = OptimizerState::adam(1e-2, 1e-1, &store);
        opt.step(&mut store).unwrap();
        assert!((store.value(id).item().unwrap() - 2.0 * (1.0 - 1e-3)).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let (mut store, _) = scalar_store(1.0, None);
        let mut opt = OptimizerState::rmsprop(1e-4, 0.0, &store);
        assert!(matches!(opt.step(&mut store), Err(Error::Argument(_))));
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut store = ParamStore::new();
            let id = store.add("w", Tensor::row(vec![0.1, 0.2]));
            let mut opt = OptimizerState::adam(1e-3, 1e-3, &store);
            for k in 0..4 {
                store
                    .accumulate_grad(id, &Tensor::row(vec![k as f64 * 0.3, -0.7]))
                    .unwrap();
                opt.step(&mut store).unwrap();
            }
            store.checksum()
        };
        assert_eq!(run(), run());
    }
}
