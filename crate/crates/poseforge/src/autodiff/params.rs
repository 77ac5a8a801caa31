//! Parameter storage and the Adam optimizer.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A named tensor with its gradient and Adam state.
///
/// Non-trainable entries (batchnorm running statistics) are carried through
/// checkpoints but never touched by the optimizer.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// First-moment Adam accumulator.
    pub m: Tensor,
    /// Second-moment Adam accumulator.
    pub v: Tensor,
    /// Number of Adam updates applied so far (drives bias correction).
    pub steps: u64,
    pub trainable: bool,
}

/// Adam hyperparameters; the defaults are beta1 0.9, beta2 0.999, eps 1e-8.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Ordered collection of parameters. Insertion order is part of the model
/// definition: checkpoints serialize entries in this order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    /// Registers a parameter; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            self.by_name(&name).is_none(),
            "duplicate parameter name '{name}'"
        );
        let shape = value.shape().to_vec();
        self.params.push(Parameter {
            name,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            steps: 0,
            trainable,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar values across trainable parameters.
    pub fn trainable_numel(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Applies one Adam update with bias correction to every trainable
    /// parameter, then clears all gradients.
    ///
    /// Fails on a non-positive learning rate or a non-finite gradient; the
    /// store is untouched in both cases.
    pub fn adam_step(&mut self, lr: f64, cfg: &AdamConfig) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive and finite, got {lr}"
            )));
        }
        for p in &self.params {
            if p.trainable && !p.grad.all_finite() {
                return Err(Error::Numerical(format!(
                    "gradient of '{}' is not finite",
                    p.name
                )));
            }
        }
        for p in &mut self.params {
            if !p.trainable {
                continue;
            }
            p.steps += 1;
            let bc1 = 1.0 - cfg.beta1.powi(p.steps as i32);
            let bc2 = 1.0 - cfg.beta2.powi(p.steps as i32);
            let value = p.value.data_mut();
            let grad = p.grad.data();
            let m = p.m.data_mut();
            let v = p.v.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        self.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        // With a constant unit gradient the bias corrections cancel and the
        // very first step is -lr (up to the eps in the denominator).
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(&[1]), true);
        store.get_mut(id).grad.data_mut()[0] = 1.0;
        store.adam_step(0.1, &AdamConfig::default()).unwrap();
        let v = store.get(id).value.data()[0];
        assert!((v + 0.1).abs() < 1e-8, "step moved to {v}, expected -0.1");
        assert_eq!(store.get(id).steps, 1);
        assert_eq!(store.get(id).grad.data()[0], 0.0);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[2], vec![0.5, -0.25]), true);
        store.adam_step(0.1, &AdamConfig::default()).unwrap();
        assert_eq!(store.get(id).value.data(), &[0.5, -0.25]);
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut store = ParamStore::new();
        let id = store.add("running_mean", Tensor::zeros(&[3]), false);
        store.get_mut(id).grad.data_mut().fill(5.0);
        store.adam_step(0.1, &AdamConfig::default()).unwrap();
        assert_eq!(store.get(id).value.data(), &[0.0, 0.0, 0.0]);
        assert_eq!(store.get(id).steps, 0);
    }

    #[test]
    fn adam_rejects_bad_inputs() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(&[1]), true);
        assert!(store.adam_step(0.0, &AdamConfig::default()).is_err());
        assert!(store.adam_step(-1.0, &AdamConfig::default()).is_err());
        store.get_mut(id).grad.data_mut()[0] = f64::NAN;
        let err = store.adam_step(0.1, &AdamConfig::default());
        assert!(matches!(err, Err(Error::Numerical(_))));
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_panic() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[1]), true);
        store.add("w", Tensor::zeros(&[1]), true);
    }

    #[test]
    fn adam_matches_reference_trajectory() {
        // Hand-stepped reference for g = value (quadratic-like pull toward a
        // fixed point), three iterations, lr 0.5.
        let cfg = AdamConfig::default();
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[1], vec![1.0]), true);

        let (mut rm, mut rv, mut rw) = (0.0f64, 0.0f64, 1.0f64);
        for t in 1..=3 {
            store.get_mut(id).grad.data_mut()[0] = rw;
            store.adam_step(0.5, &cfg).unwrap();

            let g = rw;
            rm = cfg.beta1 * rm + (1.0 - cfg.beta1) * g;
            rv = cfg.beta2 * rv + (1.0 - cfg.beta2) * g * g;
            let mh = rm / (1.0 - cfg.beta1.powi(t));
            let vh = rv / (1.0 - cfg.beta2.powi(t));
            rw -= 0.5 * mh / (vh.sqrt() + cfg.eps);
            assert!(
                (store.get(id).value.data()[0] - rw).abs() < 1e-12,
                "diverged from reference at step {t}"
            );
        }
    }
}
