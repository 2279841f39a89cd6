use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// AdamW with decoupled weight decay, bias correction and a cosine schedule
/// after linear warmup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub total_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(num_params: usize, base_lr: f64, weight_decay: f64, total_steps: usize) -> Self {
        OptimizerState {
            base_lr,
            weight_decay,
            warmup_fraction: 0.03,
            total_steps,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn warmup_steps(&self) -> usize {
        // guard against 0.03 * 100 = 3.0000000000000004
        (self.warmup_fraction * self.total_steps as f64 - 1e-9).ceil().max(0.0) as usize
    }

    pub fn schedule(&self, step: usize) -> f64 {
        let warmup = self.warmup_steps();
        if step < warmup {
            return self.base_lr * step as f64 / warmup as f64;
        }
        let span = self.total_steps.saturating_sub(warmup);
        if span == 0 {
            return self.base_lr;
        }
        let progress = ((step - warmup) as f64 / span as f64).min(1.0);
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    /// One update of `params` in place with the rate for the current step.
    pub fn adamw_step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), ModelError> {
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(ModelError::Diverged(i));
        }
        let lr = self.schedule(self.step);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            params[i] -= lr * self.weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let o = OptimizerState::new(1, 2e-4, 0.01, 1000);
        assert_eq!(o.warmup_steps(), 30);
        assert_eq!(o.schedule(0), 0.0);
        assert_eq!(o.schedule(30), 2e-4);
        assert!(o.schedule(1000) <= 1e-9);
        assert!(o.schedule(15) < o.schedule(29));
        assert!(o.schedule(500) < o.schedule(31));
        assert_eq!(OptimizerState::new(1, 1.0, 0.0, 100).warmup_steps(), 3);
    }

    #[test]
    fn zero_gradient_updates() {
        let mut o = OptimizerState::new(3, 1e-3, 0.0, 10);
        o.step = 5;
        let mut p = vec![1.0, -2.0, 3.0];
        o.adamw_step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);

        let mut o = OptimizerState::new(3, 1e-3, 0.01, 10);
        o.step = 5;
        let lr = o.schedule(5);
        let mut p = vec![1.0, -2.0, 3.0];
        o.adamw_step(&mut p, &[0.0; 3]).unwrap();
        for (a, b) in p.iter().zip([1.0, -2.0, 3.0]) {
            assert_eq!(*a, b * (1.0 - lr * 0.01));
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut o = OptimizerState::new(2, 1e-3, 0.0, 10);
        let mut p = vec![0.0; 2];
        assert!(matches!(o.adamw_step(&mut p, &[0.0, f64::NAN]), Err(ModelError::Diverged(1))));
    }
}
