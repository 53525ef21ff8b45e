use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Cosine annealing from `base_lr` at step 0 to zero at `horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub horizon: u64,
}

impl CosineSchedule {
    pub fn new(base_lr: f64, horizon: u64) -> Self {
        Self { base_lr, horizon }
    }

    /// Constant learning rate.
    pub fn constant(base_lr: f64) -> Self {
        Self { base_lr, horizon: 0 }
    }

    pub fn lr(&self, step: u64) -> f64 {
        if self.horizon == 0 {
            return self.base_lr;
        }
        let frac = (step.min(self.horizon)) as f64 / self.horizon as f64;
        0.5 * self.base_lr * (1.0 + (PI * frac).cos())
    }
}

/// Adam moments for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// One bias-corrected Adam update with learning rate `lr`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count");
        assert_eq!(grads.len(), self.m.len(), "gradient count");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = lr * bc2.sqrt() / bc1;
        let eps_hat = self.eps * bc2.sqrt();
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= step * *m / (v.sqrt() + eps_hat);
        }
    }
}

/// `target <- (1 - coeff) target + coeff online`.
pub fn soft_update(target: &mut [f64], online: &[f64], coeff: f64) {
    assert_eq!(target.len(), online.len(), "soft update shapes");
    for (t, o) in target.iter_mut().zip(online) {
        *t = (1.0 - coeff) * *t + coeff * o;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_move() {
        let mut a = Adam::new(3);
        let mut p = vec![1.0, -2.0, 3.0];
        a.step(&mut p, &[0.0; 3], 0.1);
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut a = Adam::new(4);
        let mut p = vec![0.0; 4];
        a.step(&mut p, &[3.0, -0.01, 1e3, -7.0], 3e-4);
        for (v, s) in p.iter().zip([-1.0, 1.0, -1.0, 1.0]) {
            assert!((v - s * 3e-4).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn cosine_endpoints() {
        let s = CosineSchedule::new(3e-4, 1000);
        assert_eq!(s.lr(0), 3e-4);
        assert!((s.lr(500) - 1.5e-4).abs() < 1e-15);
        assert!(s.lr(1000) <= 1e-3 * 3e-4);
        assert!(s.lr(5000) <= 1e-3 * 3e-4);
        assert_eq!(CosineSchedule::constant(1e-3).lr(10_000), 1e-3);
    }

    #[test]
    fn soft_update_limits() {
        let mut t = vec![1.0, 2.0];
        soft_update(&mut t, &[5.0, 6.0], 0.0);
        assert_eq!(t, vec![1.0, 2.0]);
        soft_update(&mut t, &[5.0, 6.0], 1.0);
        assert_eq!(t, vec![5.0, 6.0]);
    }

    #[test]
    fn soft_update_gap_shrinks_geometrically() {
        let mut t = vec![0.0];
        let mut gap = 1.0;
        for _ in 0..50 {
            soft_update(&mut t, &[1.0], 0.05);
            let g = 1.0 - t[0];
            assert!((g - 0.95 * gap).abs() < 1e-14);
            gap = g;
        }
    }
}
