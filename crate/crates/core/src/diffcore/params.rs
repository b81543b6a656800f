use std::collections::HashMap;

use super::{DiffError, Float, Gradients, Tape, Tensor, Var};

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<F: Float> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    index: HashMap<String, usize>,
}

/// Tape handles for every tensor of a [`ParamSet`], in insertion order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Handles recorded elsewhere, in parameter-id order. Lets callers run a
    /// model over tape leaves they created themselves.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        BoundParams { vars }
    }

    pub fn var(&self, id: usize) -> Var {
        self.vars[id]
    }
}

impl<F: Float> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    /// Adds a tensor and returns its id. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> Result<usize, DiffError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(DiffError::Contract(format!("duplicate parameter name {name}")));
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor.with_grad());
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: usize) -> &Tensor<F> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor<F> {
        &mut self.tensors[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape`. Parameters for which `trainable`
    /// returns false enter as constants and never receive gradients.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, F>, trainable: impl Fn(usize) -> bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| if trainable(i) { tape.leaf(t) } else { tape.constant(t) })
            .collect();
        BoundParams { vars }
    }

    /// Copies the gradients from one backward pass into the parameter
    /// accumulators (`+=`).
    pub fn accumulate(&mut self, bound: &BoundParams, grads: &Gradients<F>) -> Result<(), DiffError> {
        for (tensor, &var) in self.tensors.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.get(var) {
                tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Extracts the gradients of one backward pass as dense per-parameter
    /// buffers (zeros where no path exists).
    pub fn collect_grads(&self, bound: &BoundParams, grads: &mut Gradients<F>) -> Vec<Vec<F>> {
        self.tensors
            .iter()
            .zip(&bound.vars)
            .map(|(t, &v)| grads.take(v).unwrap_or_else(|| vec![F::zero(); t.len()]))
            .collect()
    }

    /// Adds dense per-parameter buffers into the accumulators.
    pub fn accumulate_dense(&mut self, grads: &[Vec<F>]) -> Result<(), DiffError> {
        if grads.len() != self.tensors.len() {
            return Err(DiffError::State(format!(
                "{} gradient buffers for {} parameters",
                grads.len(),
                self.tensors.len()
            )));
        }
        for (t, g) in self.tensors.iter_mut().zip(grads) {
            t.accumulate_grad(g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Euclidean norm over all accumulated gradients.
    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .filter_map(|t| t.grad())
            .flatten()
            .map(|g| {
                let v = g.as_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = F::of(max_norm / norm);
            for t in &mut self.tensors {
                if t.grad().is_some() {
                    t.grad_mut().iter_mut().for_each(|g| *g *= s);
                }
            }
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}
