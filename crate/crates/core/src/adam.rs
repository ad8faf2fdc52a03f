//! Adam with bias correction, plus global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<Matrix>,
    second_moment: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    /// Fresh state with zero moments shaped like `params`.
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let first_moment: Vec<Matrix> = params
            .into_iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        let second_moment = first_moment.clone();
        AdamState {
            config,
            first_moment,
            second_moment,
            step: 0,
        }
    }

    /// First and second moment accumulators, one per parameter.
    pub fn moments(&self) -> (&[Matrix], &[Matrix]) {
        (&self.first_moment, &self.second_moment)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(params: &mut [&mut Matrix], grads: &[Matrix], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::invalid(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
    }

    state.step += 1;
    let AdamConfig {
        learning_rate: lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        let p = p.as_mut_slice();
        let m = m.as_mut_slice();
        let v = v.as_mut_slice();
        for i in 0..p.len() {
            let gi = g.as_slice()[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.as_slice())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.as_mut_slice() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::filled(1, 1, v)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Matrix::from_rows(&[&[0.5, -1.5]]);
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        adam_step(&mut [&mut p], &[Matrix::zeros(1, 2)], &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar(1.0);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(cfg, [&p]);
        adam_step(&mut [&mut p], &[scalar(1.0)], &mut st).unwrap();
        // m̂ = 1, v̂ = 1 → step = lr / (1 + ε)
        assert!((p[(0, 0)] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p[(0, 0)] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = Matrix::from_rows(&[&[0.1, 0.2], &[0.3, 0.4]]);
            let mut st = AdamState::new(AdamConfig::default(), [&p]);
            let g = Matrix::from_rows(&[&[1.0, -2.0], &[0.5, 0.0]]);
            for _ in 0..3 {
                adam_step(&mut [&mut p], std::slice::from_ref(&g), &mut st).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut p = scalar(1.0);
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        assert!(adam_step(&mut [&mut p], &[Matrix::zeros(2, 1)], &mut st).is_err());
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Matrix::column(&[3.0]), Matrix::column(&[4.0])];
        let n = clip_grad_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0][(0, 0)] - 0.6).abs() < 1e-15);
        assert!((g[1][(0, 0)] - 0.8).abs() < 1e-15);
    }
}
