use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{GradMap, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for Adam, keyed like the parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: BTreeMap<String, Vec<f64>>,
    second_moment: BTreeMap<String, Vec<f64>>,
    step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.second_moment.get(name).map(Vec::as_slice)
    }
}

/// One bias-corrected Adam update.
///
/// A parameter without an entry in `grads` is updated as if its gradient
/// were zero: its moments still decay, so it only moves if earlier steps
/// left momentum behind.
pub fn adam_step(params: &mut ParamStore, grads: &GradMap, state: &mut AdamState) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("gradient for unknown parameter {name}")))?;
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                shapes: vec![p.shape().to_vec(), g.shape().to_vec()],
            });
        }
    }
    state.step_count += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step_count as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let n = p.len();
        let m = state
            .first_moment
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; n]);
        let v = state
            .second_moment
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; n]);
        let g = grads.get(name).map(|t| t.data());
        for i in 0..n {
            let gi = g.map_or(0.0, |g| g[i]);
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            p.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    fn store(values: Vec<f64>) -> ParamStore {
        let mut p = ParamStore::new(0);
        p.insert("w", Tensor::vector(values));
        p
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut p = store(vec![0.5, -1.5]);
        let before = p.clone();
        let mut g = GradMap::new();
        g.insert("w", Tensor::vector(vec![0.0, 0.0]));
        let mut s = AdamState::new(AdamConfig::default());
        for _ in 0..3 {
            adam_step(&mut p, &g, &mut s).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(s.step_count(), 3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + ε) ≈ lr.
        let mut p = store(vec![2.0]);
        let mut g = GradMap::new();
        g.insert("w", Tensor::vector(vec![1.0]));
        let mut s = AdamState::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        adam_step(&mut p, &g, &mut s).unwrap();
        let expected = 2.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().item() - expected).abs() < 1e-15);
        assert!((p.get("w").unwrap().item() - 1.9).abs() < 1e-8);
    }

    #[test]
    fn identical_inputs_give_identical_results() {
        let mut g = GradMap::new();
        g.insert("w", Tensor::vector(vec![0.3, -0.7]));
        let (mut a, mut b) = (store(vec![1.0, 2.0]), store(vec![1.0, 2.0]));
        let (mut sa, mut sb) = (
            AdamState::new(AdamConfig::default()),
            AdamState::new(AdamConfig::default()),
        );
        for _ in 0..5 {
            adam_step(&mut a, &g, &mut sa).unwrap();
            adam_step(&mut b, &g, &mut sb).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert!(sa.second_moment("w").unwrap().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn missing_gradient_counts_as_zero() {
        let mut p = store(vec![1.0]);
        let mut s = AdamState::new(AdamConfig::default());
        adam_step(&mut p, &GradMap::new(), &mut s).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 1.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = store(vec![1.0, 2.0]);
        let mut g = GradMap::new();
        g.insert("w", Tensor::vector(vec![1.0]));
        let mut s = AdamState::new(AdamConfig::default());
        assert!(adam_step(&mut p, &g, &mut s).is_err());
    }
}
