//! Named parameter store with Adam (default) and plain SGD updates.

use std::collections::HashMap;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
    m: Tensor<T>,
    v: Tensor<T>,
}

/// Parameters plus per-parameter optimizer state.
#[derive(Clone, Default)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
    step: u64,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            step: 0,
        }
    }

    pub fn register(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Parameter(format!("duplicate parameter {name}")));
        }
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.to_string(),
            value,
            trainable,
            m,
            v,
        });
        let id = ParamId(self.params.len() - 1);
        self.index.insert(name.to_string(), id.0);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.params[i].value)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.params[id.0].value.shape() {
            return Err(Error::Shape(format!(
                "parameter {}: cannot replace shape {:?} with {:?}",
                self.params[id.0].name,
                self.params[id.0].value.shape(),
                value.shape()
            )));
        }
        self.params[id.0].value = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Total number of stored values across parameters matching `filter`.
    pub fn count_values(&self, filter: impl Fn(&Param<T>) -> bool) -> usize {
        self.params
            .iter()
            .filter(|p| filter(p))
            .map(|p| p.value.len())
            .sum()
    }

    fn check_grads(&self, grads: &[(ParamId, Tensor<T>)]) -> Result<()> {
        for (id, g) in grads {
            let p = &self.params[id.0];
            if g.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "gradient for {} has shape {:?}, parameter {:?}",
                    p.name,
                    g.shape(),
                    p.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// Bias-corrected Adam update, in place. Non-trainable parameters are
    /// left untouched even if a gradient is supplied.
    pub fn adam_step(&mut self, grads: &[(ParamId, Tensor<T>)], cfg: &AdamConfig) -> Result<()> {
        self.check_grads(grads)?;
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
        let one_m_b1 = T::from_f64(1.0 - cfg.beta1);
        let one_m_b2 = T::from_f64(1.0 - cfg.beta2);
        let lr = T::from_f64(cfg.lr);
        let eps = T::from_f64(cfg.eps);
        let ibc1 = T::from_f64(1.0 / bc1);
        let ibc2 = T::from_f64(1.0 / bc2);
        for (id, g) in grads {
            let p = &mut self.params[id.0];
            if !p.trainable {
                continue;
            }
            let m = p.m.make_mut();
            let v = p.v.make_mut();
            let w = p.value.make_mut();
            for i in 0..g.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + one_m_b1 * gi;
                v[i] = b2 * v[i] + one_m_b2 * gi * gi;
                let mhat = m[i] * ibc1;
                let vhat = v[i] * ibc2;
                w[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Plain gradient descent, in place.
    pub fn sgd_step(&mut self, grads: &[(ParamId, Tensor<T>)], lr: f64) -> Result<()> {
        self.check_grads(grads)?;
        self.step += 1;
        let lr = T::from_f64(lr);
        for (id, g) in grads {
            let p = &mut self.params[id.0];
            if !p.trainable {
                continue;
            }
            let w = p.value.make_mut();
            for i in 0..g.len() {
                w[i] -= lr * g.data()[i];
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut s = ParamStore::<f64>::new();
        s.register("w", Tensor::zeros(&[2]), true).unwrap();
        assert!(s.register("w", Tensor::zeros(&[2]), true).is_err());
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = ParamStore::<f64>::new();
        let id = s
            .register("w", Tensor::new(&[2], vec![1.0, -2.0]).unwrap(), true)
            .unwrap();
        s.adam_step(&[(id, Tensor::zeros(&[2]))], &AdamConfig::default())
            .unwrap();
        assert_eq!(s.value(id).data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // With g=1 at step 1, bias-corrected m/sqrt(v) = 1, so the update is
        // -lr / (1 + eps') with eps tiny.
        let mut s = ParamStore::<f64>::new();
        let id = s
            .register("w", Tensor::new(&[1], vec![0.0]).unwrap(), true)
            .unwrap();
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        s.adam_step(&[(id, Tensor::new(&[1], vec![1.0]).unwrap())], &cfg)
            .unwrap();
        let got = s.value(id).data()[0];
        assert!((got + 0.1).abs() < 1e-6, "got {got}");
    }

    #[test]
    fn adam_matches_handwritten_recurrences() {
        // Five steps on f(x) = 0.5 x^2 (gradient x), recomputed with an
        // independent evaluation of the Adam recurrences.
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut s = ParamStore::<f64>::new();
        let id = s
            .register("x", Tensor::new(&[1], vec![2.0]).unwrap(), true)
            .unwrap();

        let (mut x, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
        for t in 1..=5u32 {
            let g = s.value(id).data()[0];
            s.adam_step(&[(id, Tensor::new(&[1], vec![g]).unwrap())], &cfg)
                .unwrap();

            let ge = x;
            m = 0.9 * m + 0.1 * ge;
            v = 0.999 * v + 0.001 * ge * ge;
            let mhat = m / (1.0 - 0.9f64.powi(t as i32));
            let vhat = v / (1.0 - 0.999f64.powi(t as i32));
            x -= 0.1 * mhat / (vhat.sqrt() + 1e-8);

            assert!(
                (s.value(id).data()[0] - x).abs() < 1e-10,
                "step {t}: {} vs {x}",
                s.value(id).data()[0]
            );
        }
    }

    #[test]
    fn gradient_shape_mismatch_is_rejected() {
        let mut s = ParamStore::<f64>::new();
        let id = s.register("w", Tensor::zeros(&[2]), true).unwrap();
        let err = s.adam_step(&[(id, Tensor::zeros(&[3]))], &AdamConfig::default());
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn frozen_parameters_ignore_updates() {
        let mut s = ParamStore::<f64>::new();
        let id = s
            .register("w", Tensor::new(&[1], vec![1.0]).unwrap(), false)
            .unwrap();
        s.adam_step(
            &[(id, Tensor::new(&[1], vec![5.0]).unwrap())],
            &AdamConfig::default(),
        )
        .unwrap();
        assert_eq!(s.value(id).data(), &[1.0]);
    }
}
