use serde::{Deserialize, Serialize};

use super::mlp::{MlpGrads, MlpParams};
use crate::error::{shape_err, NcError, Result};

/// Adam with bias correction over a flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn for_params(params: &MlpParams, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self::new(params.param_count(), lr, beta1, beta2, eps)
    }

    /// One update over named blocks laid out consecutively in the flattened
    /// vector. Nothing is modified if any gradient entry is non-finite.
    pub fn step_blocks(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], names: impl Fn(usize) -> String) -> Result<()> {
        if params.len() != grads.len() {
            return shape_err("parameter and gradient block counts differ");
        }
        let mut total = 0;
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return shape_err(format!("{}: {} params vs {} grads", names(i), p.len(), g.len()));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NcError::NonFinite { block: names(i) });
            }
            total += p.len();
        }
        if total != self.m.len() {
            return shape_err(format!("optimizer holds {} moments, got {total} params", self.m.len()));
        }

        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut offset = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            let m = &mut self.m[offset..offset + p.len()];
            let v = &mut self.v[offset..offset + p.len()];
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g.iter()).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            offset += p.len();
        }
        Ok(())
    }

    pub fn step_flat(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.step_blocks(&mut [params], &[grads], |_| "parameters".to_string())
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpGrads) -> Result<()> {
        let g = grads.blocks();
        let mut p = params.blocks_mut();
        self.step_blocks(&mut p, &g, MlpParams::block_name)
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, params: &mut MlpParams, grads: &MlpGrads) -> Result<()> {
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(3, 1e-3, 0.5, 0.999, 1e-8);
        let mut p = [1.0, -2.0, 3.0];
        s.step_flat(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, [1.0, -2.0, 3.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn hand_evaluated_first_step() {
        let mut s = AdamState::new(1, 0.1, 0.5, 0.999, 1e-8);
        let mut p = [0.0];
        s.step_flat(&mut p, &[1.0]).unwrap();
        assert!((s.m[0] - 0.5).abs() < 1e-15);
        assert!((s.v[0] - 0.001).abs() < 1e-15);
        // m̂ = 1, v̂ = 1
        assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_block_and_changes_nothing() {
        let mut params = MlpParams::zeros(&[2, 2, 1]).unwrap();
        let mut grads = MlpGrads::zeros_like(&params);
        grads.biases[1][0] = f64::NAN;
        let mut s = AdamState::for_params(&params, 0.1, 0.5, 0.999, 1e-8);
        let before = s.clone();
        match s.step(&mut params, &grads) {
            Err(NcError::NonFinite { block }) => assert_eq!(block, "layer 1 bias"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s, before);
    }

    #[test]
    fn deterministic_repeats() {
        let run = || {
            let mut s = AdamState::new(4, 0.01, 0.5, 0.999, 1e-8);
            let mut p = vec![0.1, 0.2, 0.3, 0.4];
            for k in 0..50 {
                let g: Vec<f64> = p.iter().map(|x| (x * k as f64).sin()).collect();
                s.step_flat(&mut p, &g).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
