//! Bias-corrected Adam over flat parameter slices, so networks and composite
//! models (residual trunks, policy heads) share one optimizer.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }
}

/// One Adam update over matching (parameter, gradient) slice lists. The
/// moment buffers are allocated on first use and must keep their shapes
/// afterwards. Non-finite gradients abort the update untouched.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
) -> Result<()> {
    assert_eq!(params.len(), grads.len(), "parameter/gradient group count");
    if state.first_moment.is_empty() {
        state.first_moment = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        state.second_moment = grads.iter().map(|g| vec![0.0; g.len()]).collect();
    }
    assert_eq!(state.first_moment.len(), grads.len(), "optimizer shape drift");
    for (g, m) in grads.iter().zip(&state.first_moment) {
        assert_eq!(g.len(), m.len(), "optimizer shape drift");
    }
    for g in grads {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("adam gradient".into()));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(&mut state.second_moment))
    {
        for i in 0..g.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_and_increments_step() {
        let mut p = vec![1.0, -2.0, 3.0];
        let g = vec![0.0; 3];
        let mut state = AdamState::new(1e-3);
        adam_step(&mut [p.as_mut_slice()], &[g.as_slice()], &mut state).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Bias correction makes m_hat/sqrt(v_hat) = sign(g) on step one.
        let mut p = vec![0.0, 0.0];
        let g = vec![0.5, -3.0];
        let mut state = AdamState::new(1e-3);
        adam_step(&mut [p.as_mut_slice()], &[g.as_slice()], &mut state).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-9);
        assert!((p[1] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn identical_runs_are_identical() {
        let run = || {
            let mut p = vec![0.3, -0.8];
            let mut state = AdamState::new(0.01);
            for k in 0..25 {
                let g = vec![(k as f64 * 0.1).sin(), (k as f64 * 0.2).cos()];
                adam_step(&mut [p.as_mut_slice()], &[g.as_slice()], &mut state).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut p = vec![0.7, -0.1];
        let mut state = AdamState::new(0.0);
        for _ in 0..5 {
            let g = vec![1.0, -2.0];
            adam_step(&mut [p.as_mut_slice()], &[g.as_slice()], &mut state).unwrap();
        }
        assert_eq!(p, vec![0.7, -0.1]);
        assert_eq!(state.step, 5);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = vec![1.0];
        let g = vec![f64::NAN];
        let mut state = AdamState::new(1e-3);
        assert!(adam_step(&mut [p.as_mut_slice()], &[g.as_slice()], &mut state).is_err());
        assert_eq!(p, vec![1.0]);
    }
}
