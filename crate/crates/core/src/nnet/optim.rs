use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First-order optimizer state aligned with a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Argument(format!("learning rate must be > 0, got {lr}")));
        }
        let moments = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => n_params,
        };
        Ok(OptimizerState { kind, lr, m: vec![0.0; moments], v: vec![0.0; moments], step: 0 })
    }

    pub fn sgd(lr: f64, n_params: usize) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr, n_params)
    }

    pub fn adam(lr: f64, n_params: usize) -> Result<Self> {
        Self::new(OptimizerKind::Adam, lr, n_params)
    }

    /// Applies one update in place. On non-finite gradients nothing changes.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!("{} parameters vs {} gradients", params.len(), grads.len())));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient[{i}] = {}", grads[i])));
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    return Err(Error::Shape(format!(
                        "adam moments sized {} for {} parameters",
                        self.m.len(),
                        params.len()
                    )));
                }
                let t = (self.step + 1) as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let mhat = self.m[i] / bc1;
                    let vhat = self.v[i] / bc2;
                    params[i] -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut p = vec![1.0, -2.0, 3.0];
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut opt = OptimizerState::new(kind, 0.1, 3).unwrap();
            opt.step(&mut p, &[0.0; 3]).unwrap();
            assert_eq!(p, vec![1.0, -2.0, 3.0]);
        }
    }

    #[test]
    fn sgd_unit_lr_with_grads_equal_params_zeroes() {
        let mut p = vec![1.5, -2.0, 0.25];
        let g = p.clone();
        OptimizerState::sgd(1.0, 3).unwrap().step(&mut p, &g).unwrap();
        assert_eq!(p, vec![0.0; 3]);
    }

    #[test]
    fn adam_first_step_matches_hand_recurrence() {
        // m1 = 0.1 g, v1 = 0.001 g², bias-corrected: mhat = g, vhat = g²,
        // update = -lr · g / (|g| + eps)
        let lr = 0.01;
        let g = [0.5, -3.0, 1e-3];
        let mut p = vec![0.0; 3];
        OptimizerState::adam(lr, 3).unwrap().step(&mut p, &g).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            let expected = -lr * gi / (gi.abs() + ADAM_EPS);
            assert!((pi - expected).abs() < 1e-15, "{pi} vs {expected}");
        }
    }

    #[test]
    fn non_finite_grads_abort_without_change() {
        let mut p = vec![1.0, 2.0];
        let mut opt = OptimizerState::adam(0.1, 2).unwrap();
        assert!(matches!(opt.step(&mut p, &[f64::NAN, 0.0]), Err(Error::NonFinite(_))));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(opt.step, 0);
    }
}
