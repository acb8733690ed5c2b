//! Adam optimizer state for one flat parameter vector, shared by the
//! fixture trainer and the mask optimizer.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    /// Defaults for mask-variable optimization.
    pub const fn mask_default() -> AdamParams {
        AdamParams {
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Defaults for fixture training.
    pub const fn train_default() -> AdamParams {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn with_lr(self, lr: f64) -> AdamParams {
        AdamParams { lr, ..self }
    }
}

/// Bias-corrected Adam over a fixed-length parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    hp: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, hp: AdamParams) -> Adam {
        Adam {
            hp,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One update step; `params` and `grads` must match the state length.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1 = self.hp.beta1;
        let b2 = self.hp.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.hp.lr * m_hat / (v_hat.sqrt() + self.hp.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        // With bias correction, step 1 is lr * g / (|g| + eps) ~= lr * sign(g).
        let mut adam = Adam::new(2, AdamParams::mask_default());
        let mut p = [1.0, 1.0];
        adam.step(&mut p, &[0.3, -0.7]);
        assert!((p[0] - (1.0 - 0.05)).abs() < 1e-6);
        assert!((p[1] - (1.0 + 0.05)).abs() < 1e-6);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut adam = Adam::new(1, AdamParams::train_default().with_lr(0.1));
        let mut p = [5.0];
        for _ in 0..500 {
            let g = 2.0 * (p[0] - 2.0);
            adam.step(&mut p, &[g]);
        }
        assert!((p[0] - 2.0).abs() < 1e-3, "p = {}", p[0]);
    }
}
