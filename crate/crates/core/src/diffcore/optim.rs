//! AdamW: Adam with decoupled weight decay.
//!
//! ```text
//! p ← p − lr·wd·p
//! m ← β1·m + (1 − β1)·g
//! v ← β2·v + (1 − β2)·g²
//! p ← p − lr · m̂ / (√v̂ + ε),   m̂ = m / (1 − β1ᵗ),  v̂ = v / (1 − β2ᵗ)
//! ```

use serde::{Deserialize, Serialize};

use super::{DiffError, Float, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Optimizer moments for one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamW<F: Float> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Float> AdamW<F> {
    pub fn new(config: AdamWConfig, params: &ParamSet<F>) -> Self {
        let zeros = |i: usize| vec![F::zero(); params.get(i).len()];
        AdamW { config, step: 0, m: (0..params.len()).map(zeros).collect(), v: (0..params.len()).map(zeros).collect() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: usize) -> &[F] {
        &self.m[id]
    }

    pub fn second_moment(&self, id: usize) -> &[F] {
        &self.v[id]
    }

    /// Updates every parameter from its accumulated gradient.
    pub fn step(&mut self, params: &mut ParamSet<F>) -> Result<(), DiffError> {
        self.step_where(params, |_| true)
    }

    /// Updates only parameters selected by `active`; the others (and their
    /// moments) are left untouched. The step counter still advances.
    pub fn step_where(&mut self, params: &mut ParamSet<F>, active: impl Fn(usize) -> bool) -> Result<(), DiffError> {
        if params.len() != self.m.len() {
            return Err(DiffError::State(format!("optimizer tracks {} tensors, got {}", self.m.len(), params.len())));
        }
        for id in 0..params.len() {
            if params.get(id).len() != self.m[id].len() {
                return Err(DiffError::State(format!("moment shape mismatch for {}", params.name(id))));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let (one_b1, one_b2) = (F::of(1.0 - c.beta1), F::of(1.0 - c.beta2));
        let lr = F::of(c.lr);
        let decay = F::of(1.0 - c.lr * c.weight_decay);
        let inv_bc1 = F::of(1.0 / bc1);
        let inv_bc2 = F::of(1.0 / bc2);
        let eps = F::of(c.eps);

        for id in 0..params.len() {
            if !active(id) {
                continue;
            }
            let tensor = params.get_mut(id);
            let grad: Vec<F> = match tensor.grad() {
                Some(g) => g.to_vec(),
                None => vec![F::zero(); tensor.len()],
            };
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            for (((p, g), mi), vi) in tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *p *= decay;
                *mi = b1 * *mi + one_b1 * *g;
                *vi = b2 * *vi + one_b2 * *g * *g;
                let mhat = *mi * inv_bc1;
                let vhat = *vi * inv_bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    fn scalar_set(p: f64) -> ParamSet<f64> {
        let mut set = ParamSet::new();
        set.insert("p", Tensor::new(&[1], vec![p]).unwrap()).unwrap();
        set
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut set = scalar_set(0.7);
        set.get_mut(0).accumulate_grad(&[0.0]).unwrap();
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(cfg, &set);
        for _ in 0..10 {
            opt.step(&mut set).unwrap();
        }
        assert_eq!(set.get(0).data()[0], 0.7);
        assert_eq!(opt.step_count(), 10);
    }

    #[test]
    fn single_step_matches_hand_evaluation() {
        // m = 0.1·2 = 0.2, v = 0.001·4 = 0.004, m̂ = 2, v̂ = 4
        // p = 1·(1 − 3e-4·0.01) − 3e-4·2/(2 + 1e-8)
        let expected: f64 = (1.0 - 3e-4 * 0.01) - 3e-4 * 2.0 / (2.0 + 1e-8);
        assert!((expected - 0.999_697).abs() < 1e-9);
        let mut set = scalar_set(1.0);
        set.get_mut(0).accumulate_grad(&[2.0]).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default(), &set);
        opt.step(&mut set).unwrap();
        assert!((set.get(0).data()[0] - expected).abs() < 1e-15);
        assert!((opt.first_moment(0)[0] - 0.2).abs() < 1e-15);
        assert!((opt.second_moment(0)[0] - 0.004).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut set = scalar_set(-3.0);
        set.get_mut(0).accumulate_grad(&[5.0]).unwrap();
        let mut opt = AdamW::new(AdamWConfig { lr: 0.0, ..Default::default() }, &set);
        for _ in 0..5 {
            opt.step(&mut set).unwrap();
        }
        assert_eq!(set.get(0).data()[0], -3.0);
    }

    #[test]
    fn descends_on_a_quadratic() {
        let mut set = scalar_set(1.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &set);
        let mut prev = 1.0f64;
        for _ in 0..100 {
            let p = set.get(0).data()[0];
            set.zero_grad();
            set.get_mut(0).accumulate_grad(&[2.0 * p]).unwrap();
            opt.step(&mut set).unwrap();
            let now = set.get(0).data()[0].abs();
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let set = scalar_set(1.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &set);
        let mut other = ParamSet::new();
        other.insert("p", Tensor::<f64>::zeros(&[2])).unwrap();
        assert!(matches!(opt.step(&mut other), Err(DiffError::State(_))));
    }
}
