use std::ops::Index;
use std::sync::Arc;

use super::graph::{Gradients, Graph, Var};
use super::tensor::{Real, Tensor};
use crate::error::{FlicError, Result};

/// First/second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

/// A named trainable tensor with its accumulated gradient and optimizer state.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    name: String,
    value: Arc<Tensor<T>>,
    grad: Option<Tensor<T>>,
    adam: AdamState<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let n = value.len();
        Parameter {
            name: name.into(),
            value: Arc::new(value),
            grad: None,
            adam: AdamState {
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
                step: 0,
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shared_value(&self) -> Arc<Tensor<T>> {
        self.value.clone()
    }

    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.value)
    }

    pub fn grad(&self) -> Option<&Tensor<T>> {
        self.grad.as_ref()
    }

    pub fn adam_state(&self) -> &AdamState<T> {
        &self.adam
    }

    /// Adds `g` to the accumulated gradient.
    pub fn accumulate_grad(&mut self, g: &Tensor<T>) -> Result<()> {
        if g.shape() != self.value.shape() {
            return Err(FlicError::invalid(format!(
                "gradient shape {:?} does not match parameter {} {:?}",
                g.shape(),
                self.name,
                self.value.shape()
            )));
        }
        match &mut self.grad {
            Some(acc) => acc.add_assign(g),
            None => self.grad = Some(g.clone()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Makes every parameter a leaf of `graph` (tracked only if the graph records).
    pub fn bind<'g>(&self, graph: &'g Graph<T>) -> Bound<'g, T> {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| graph.leaf_shared(p.value.clone()))
                .collect(),
        }
    }

    /// [`ParamStore::bind`] with some parameters replaced by the given graph values.
    pub fn bind_with<'g>(&self, graph: &'g Graph<T>, overrides: &[(ParamId, Var<'g, T>)]) -> Result<Bound<'g, T>> {
        let mut bound = self.bind(graph);
        for (id, var) in overrides {
            let p = &self.params[id.0];
            if var.shape() != p.value.shape() {
                return Err(FlicError::invalid(format!(
                    "override for {} has shape {:?}, expected {:?}",
                    p.name,
                    var.shape(),
                    p.value.shape()
                )));
            }
            bound.vars[id.0] = var.clone();
        }
        Ok(bound)
    }

    /// Adds the gradients found for `bound`'s leaves to each parameter.
    pub fn accumulate(&mut self, bound: &Bound<'_, T>, grads: &Gradients<T>) -> Result<()> {
        for (p, var) in self.params.iter_mut().zip(&bound.vars) {
            if let Some(g) = var.id().and_then(|id| grads.get_id(id)) {
                p.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter::new(p.name.clone(), p.value.cast()))
                .collect(),
        }
    }
}

/// Graph leaves for every parameter of a store, indexed by [`ParamId`].
pub struct Bound<'g, T> {
    vars: Vec<Var<'g, T>>,
}

impl<'g, T> Index<ParamId> for Bound<'g, T> {
    type Output = Var<'g, T>;

    fn index(&self, id: ParamId) -> &Var<'g, T> {
        &self.vars[id.0]
    }
}

/// Adam with bias correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam {
            lr,
            ..Adam::default()
        }
    }

    /// Applies one update to every parameter holding a gradient, then clears the gradients.
    pub fn step<T: Real>(&self, params: &mut [Parameter<T>]) {
        for p in params {
            let Some(grad) = p.grad.take() else { continue };
            let st = &mut p.adam;
            st.step += 1;
            let t = st.step as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let value = Arc::make_mut(&mut p.value);
            for (((w, &g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(st.m.iter_mut())
                .zip(st.v.iter_mut())
            {
                let g = g.as_f64();
                let mf = self.beta1 * m.as_f64() + (1.0 - self.beta1) * g;
                let vf = self.beta2 * v.as_f64() + (1.0 - self.beta2) * g * g;
                *m = T::from_f64(mf);
                *v = T::from_f64(vf);
                let update = self.lr * (mf / c1) / ((vf / c2).sqrt() + self.eps);
                *w = T::from_f64(w.as_f64() - update);
            }
        }
    }
}

/// Functional form of [`Adam::step`].
pub fn adam_step<T: Real>(params: &mut [Parameter<T>], lr: f64, beta1: f64, beta2: f64, eps: f64) {
    Adam {
        lr,
        beta1,
        beta2,
        eps,
    }
    .step(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![Parameter::new("w", Tensor::<f64>::scalar(0.0))];
        p[0].accumulate_grad(&Tensor::scalar(1.0)).unwrap();
        Adam::default().step(&mut p);
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let expected = -1e-4 / (1.0 + 1e-8);
        assert!((p[0].value().data()[0] - expected).abs() < 1e-15);
        assert!(p[0].grad().is_none());
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut p = vec![Parameter::new("w", Tensor::<f32>::full(&[3], 0.7))];
        p[0].accumulate_grad(&Tensor::zeros(&[3])).unwrap();
        adam_step(&mut p, 1e-4, 0.9, 0.999, 1e-8);
        assert_eq!(p[0].value().data(), &[0.7, 0.7, 0.7]);
    }

    #[test]
    fn gradient_shape_mismatch_is_an_error() {
        let mut p = Parameter::new("w", Tensor::<f32>::zeros(&[2, 2]));
        assert!(p.accumulate_grad(&Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn bind_and_accumulate_round_trip() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::full(&[2], 2.0));
        let g = Graph::new();
        let bound = store.bind(&g);
        let loss = bound[a].square().sum();
        let grads = g.backward(&loss).unwrap();
        store.accumulate(&bound, &grads).unwrap();
        store.accumulate(&bound, &grads).unwrap();
        assert_eq!(store.get(a).grad().unwrap().data(), &[8.0, 8.0]);
    }
}
