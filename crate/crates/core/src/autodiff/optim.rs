//! Adam with bias correction. Defaults follow lr 0.001, betas (0.5, 0.999).

use super::Tensor;
use crate::error::{Result, SxlError};

pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_BETA1: f64 = 0.5;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, beta1: f64, beta2: f64, param_sizes: &[usize]) -> Self {
        AdamState {
            lr,
            beta1,
            beta2,
            eps: DEFAULT_EPS,
            step: 0,
            m: param_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: param_sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn with_defaults(param_sizes: &[usize]) -> Self {
        AdamState::new(DEFAULT_LR, DEFAULT_BETA1, DEFAULT_BETA2, param_sizes)
    }

    /// One Adam update. `params` and `grads` must match the sizes the state
    /// was created with, in the same order.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(SxlError::invalid(format!(
                "adam: expected {} parameter groups, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.numel() != g.len() || p.numel() != m.len() {
                return Err(SxlError::invalid("adam: parameter size mismatch"));
            }
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moment buffers and step count as named tensors for checkpointing.
    pub fn state(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = vec![(
            format!("{prefix}.step"),
            Tensor::scalar(self.step as f64),
        )];
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            out.push((
                format!("{prefix}.m.{i}"),
                Tensor::new(vec![m.len()], m.clone()).unwrap(),
            ));
            out.push((
                format!("{prefix}.v.{i}"),
                Tensor::new(vec![v.len()], v.clone()).unwrap(),
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_magnitude_with_unit_gradient() {
        // bias-corrected mhat = g, vhat = g^2 at t = 1, so the update is
        // lr * g / (|g| + eps) ~ lr.
        let mut p = Tensor::scalar(0.5);
        let mut adam = AdamState::with_defaults(&[1]);
        adam.step(&mut [&mut p], &[&[1.0]]).unwrap();
        let delta = 0.5 - p.data[0];
        assert!((delta - 0.001).abs() < 1e-9, "delta {delta}");
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.25]).unwrap();
        let before = p.clone();
        let mut adam = AdamState::with_defaults(&[3]);
        adam.step(&mut [&mut p], &[&[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut p = Tensor::new(vec![2], vec![0.3, -0.7]).unwrap();
            let mut adam = AdamState::with_defaults(&[2]);
            for k in 0..50 {
                let g = [p.data[0] * 0.5 + k as f64 * 0.01, p.data[1].sin()];
                adam.step(&mut [&mut p], &[&g]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn step_counts_increase() {
        let mut p = Tensor::scalar(0.0);
        let mut adam = AdamState::with_defaults(&[1]);
        for want in 1..=5u64 {
            adam.step(&mut [&mut p], &[&[0.1]]).unwrap();
            assert_eq!(adam.step, want);
        }
    }
}
