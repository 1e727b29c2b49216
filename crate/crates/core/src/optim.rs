//! Adam and the cosine learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("total_steps must be at least 1")]
    NoSteps,
    #[error("step {step} outside [0, {total}]")]
    OutOfRange { step: usize, total: usize },
}

/// `base_lr · ½ · (1 + cos(π · step / total_steps))`, without warmup or floor.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64, ScheduleError> {
    if total_steps == 0 {
        return Err(ScheduleError::NoSteps);
    }
    if step > total_steps {
        return Err(ScheduleError::OutOfRange { step, total: total_steps });
    }
    if step == total_steps {
        return Ok(0.0);
    }
    let progress = step as f64 / total_steps as f64;
    Ok(base_lr * 0.5 * (1.0 + libm::cos(PI * progress)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 100, 5e-5).unwrap(), 5e-5);
        assert_eq!(cosine_lr(100, 100, 5e-5).unwrap(), 0.0);
        assert!((cosine_lr(50, 100, 5e-5).unwrap() - 2.5e-5).abs() < 1e-18);
    }

    #[test]
    fn out_of_range() {
        assert_eq!(cosine_lr(11, 10, 1.0), Err(ScheduleError::OutOfRange { step: 11, total: 10 }));
        assert_eq!(cosine_lr(0, 0, 1.0), Err(ScheduleError::NoSteps));
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut adam = Adam::new(2);
        let mut p = [1.0, -1.0];
        adam.step(&mut p, &[0.5, -2.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut adam = Adam::new(1);
        let mut x = [5.0];
        for _ in 0..2000 {
            let g = [2.0 * (x[0] - 1.5)];
            adam.step(&mut x, &g, 0.05);
        }
        assert!((x[0] - 1.5).abs() < 1e-2);
    }

    proptest! {
        #[test]
        fn nonincreasing(total in 1usize..5000, base in 1e-7f64..1.0) {
            let mut prev = cosine_lr(0, total, base).unwrap();
            prop_assert_eq!(prev, base);
            for step in 1..=total {
                let lr = cosine_lr(step, total, base).unwrap();
                prop_assert!(lr <= prev, "step {} rose from {} to {}", step, prev, lr);
                prop_assert!(lr >= 0.0);
                prev = lr;
            }
            prop_assert_eq!(prev, 0.0);
        }
    }
}
