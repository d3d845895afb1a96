//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::tensor::ParamSet;
use super::LearnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One AdamW update:
/// `p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)`.
///
/// Gradients are checked for finiteness before anything is modified.
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    cfg: &AdamWConfig,
) -> Result<(), LearnError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(LearnError::Shape(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for i in 0..grads.len() {
        if grads.get(i).len() != params.get(i).len() {
            return Err(LearnError::Shape(format!(
                "gradient for {} has {} values, parameter has {}",
                params.name(i),
                grads.get(i).len(),
                params.get(i).len()
            )));
        }
        if let Some(j) = grads.get(i).data().iter().position(|g| !g.is_finite()) {
            return Err(LearnError::NonFiniteGradient {
                param: params.name(i).to_string(),
                index: j,
            });
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for i in 0..params.len() {
        let g = grads.get(i).data();
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let p = params.get_mut(i).data_mut();
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * p[j]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::tensor::Tensor;

    fn single(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.push("w", Tensor::from_vec(vec![v]));
        ps
    }

    #[test]
    fn zero_gradient_pure_decay() {
        let mut p = single(2.0);
        let g = single(0.0);
        let mut st = AdamState::new(&p);
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.5, ..AdamWConfig::default() };
        adamw_step(&mut p, &g, &mut st, &cfg).unwrap();
        assert!((p.get(0).data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(1.0);
        let g = single(3.0);
        let mut st = AdamState::new(&p);
        let cfg = AdamWConfig { lr: 0.01, weight_decay: 0.0, eps: 0.0, ..AdamWConfig::default() };
        adamw_step(&mut p, &g, &mut st, &cfg).unwrap();
        assert!((p.get(0).data()[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_named() {
        let mut p = single(1.0);
        let g = single(f64::NAN);
        let mut st = AdamState::new(&p);
        let err = adamw_step(&mut p, &g, &mut st, &AdamWConfig::default()).unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");
        assert_eq!(p.get(0).data()[0], 1.0);
        assert_eq!(st.step_count(), 0);
    }
}
