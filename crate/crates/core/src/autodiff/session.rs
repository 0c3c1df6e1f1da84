//! Binds a [`ParamStore`] to a fresh tape for one forward/backward pass.

use super::optim::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub struct Session<'a, T: Scalar> {
    pub tape: Tape<T>,
    store: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn new(store: &'a ParamStore<T>) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
        }
    }

    /// Tape leaf for a named parameter; bound once per session.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let id = self
            .store
            .id(name)
            .ok_or_else(|| Error::Parameter(format!("unknown parameter {name}")))?;
        Ok(self.param_by_id(id))
    }

    pub fn param_by_id(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.store.value(id).clone();
        let trainable = self
            .store
            .iter()
            .nth(id.0)
            .map(|p| p.trainable)
            .unwrap_or(false);
        let v = self.tape.leaf(p, trainable);
        self.bound[id.0] = Some(v);
        v
    }

    /// Non-parameter input (never receives gradient).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.tape.leaf(t, false)
    }

    /// Backward pass; returns `(ParamId, gradient)` for every bound
    /// trainable parameter that received a gradient.
    pub fn grads(&self, loss: Var) -> Result<Vec<(ParamId, Tensor<T>)>> {
        let g = self.tape.backward(loss)?;
        let mut out = Vec::new();
        for (idx, slot) in self.bound.iter().enumerate() {
            if let Some(var) = slot {
                if let Some(t) = g.wrt(*var) {
                    out.push((ParamId(idx), t.clone()));
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_bind_once_and_receive_grads() {
        let mut store = ParamStore::<f64>::new();
        store
            .register("w", Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(), true)
            .unwrap();
        store.register("b", Tensor::zeros(&[2]), true).unwrap();

        let mut sess = Session::new(&store);
        let w1 = sess.param("w").unwrap();
        let w2 = sess.param("w").unwrap();
        assert_eq!(w1, w2);

        let x = sess.input(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
        let b = sess.param("b").unwrap();
        let y = sess.tape.linear(x, w1, b).unwrap();
        let loss = sess.tape.softmax_cross_entropy(y, &[0]).unwrap();
        let grads = sess.grads(loss).unwrap();
        assert_eq!(grads.len(), 2);
        assert!(sess.param("missing").is_err());
    }
}
