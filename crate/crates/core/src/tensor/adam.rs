//! Named parameter sets and the Adam optimizer.

use serde::{Deserialize, Serialize};

use super::{Gradients, Graph, Tensor, TensorError, Var};
use crate::scalar::Scalar;

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Vec<T>>,
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad: None,
        });
        self.params.len() - 1
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

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, index: usize) -> &Parameter<T> {
        &self.params[index]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total scalar count.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Inserts every parameter into `graph` as a gradient-tracked leaf.
    pub fn bind(&self, graph: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| graph.param(p.value.clone())).collect()
    }

    /// Adds the gradients of one backward pass. A bound parameter that the
    /// loss does not reach receives an explicit zero gradient.
    pub fn accumulate(&mut self, grads: &Gradients<T>, vars: &[Var]) {
        assert_eq!(vars.len(), self.params.len(), "vars were not bound from this set");
        for (p, &v) in self.params.iter_mut().zip(vars) {
            let acc = p.grad.get_or_insert_with(|| vec![T::zero(); p.value.numel()]);
            if let Some(g) = grads.get(v) {
                for (a, &b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Euclidean norm of all accumulated gradients.
    pub fn grad_norm(&self) -> T {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|&x| x * x)
            .sum::<T>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment buffers of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    /// Number of applied steps.
    pub t: u64,
    pub states: Vec<AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let states = params
            .iter()
            .map(|p| AdamState {
                m: vec![T::zero(); p.value.numel()],
                v: vec![T::zero(); p.value.numel()],
            })
            .collect();
        Self { config, t: 0, states }
    }

    /// One bias-corrected Adam update. Every parameter must carry a gradient;
    /// gradients are cleared afterwards.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<(), TensorError> {
        if self.states.len() != params.len() {
            return Err(TensorError::ParamState {
                name: "<set>".into(),
                reason: format!("optimizer tracks {} tensors, set has {}", self.states.len(), params.len()),
            });
        }
        for (p, s) in params.iter().zip(&self.states) {
            if p.grad.is_none() {
                return Err(TensorError::MissingGradient(p.name.clone()));
            }
            if s.m.len() != p.value.numel() {
                return Err(TensorError::ParamState {
                    name: p.name.clone(),
                    reason: "moment buffer size differs from parameter".into(),
                });
            }
        }
        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let one = T::one();
        let bc1 = T::lit(1.0 - c.beta1.powi(t));
        let bc2 = T::lit(1.0 - c.beta2.powi(t));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.epsilon);
        for (p, s) in params.iter_mut().zip(&mut self.states) {
            let g = p.grad.take().expect("checked above");
            for (((w, &gi), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(&g)
                .zip(&mut s.m)
                .zip(&mut s.v)
            {
                *m = b1 * *m + (one - b1) * gi;
                *v = b2 * *v + (one - b2) * gi * gi;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
