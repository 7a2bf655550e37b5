//! Adam optimizer with bias correction.

use crate::error::{IclError, Result};
use crate::tensor::Tensor;

/// Per-parameter moment accumulators plus hyper-parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(lr: f64, params: &[Tensor]) -> Self {
        OptimizerState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }

    /// One bias-corrected Adam update over all parameters, in order.
    pub fn adam_step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(IclError::shape(
                "adam_step",
                format!(
                    "{} params, {} grads, {} accumulators",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for ((p, g), (m, v)) in params
            .iter()
            .zip(grads)
            .zip(self.first.iter().zip(&self.second))
        {
            if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
                return Err(IclError::shape(
                    "adam_step",
                    format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let g = grads[i].data();
            let p = params[i].data_mut();
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_almost_lr_against_gradient() {
        let mut params = vec![Tensor::vector(vec![1.0, -2.0])];
        let grads = vec![Tensor::vector(vec![0.5, -3.0])];
        let mut state = OptimizerState::new(0.01, &params);
        state.adam_step(&mut params, &grads).unwrap();
        // Bias-corrected first step: delta = -lr * g / (|g| + eps') ~ -lr * sign(g).
        let p = params[0].data();
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-6, "{}", p[0]);
        assert!((p[1] - (-2.0 + 0.01)).abs() < 1e-6, "{}", p[1]);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut params = vec![Tensor::vector(vec![0.3, 0.7])];
        let grads = vec![Tensor::vector(vec![0.0, 0.0])];
        let mut state = OptimizerState::new(0.1, &params);
        for _ in 0..5 {
            state.adam_step(&mut params, &grads).unwrap();
        }
        assert_eq!(params[0].data(), &[0.3, 0.7]);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut params = vec![Tensor::vector(vec![1.0, 2.0, 3.0])];
            let mut state = OptimizerState::new(0.05, &params);
            for s in 0..20 {
                let g = Tensor::vector(vec![(s as f64).sin(), 0.25, -1.0]);
                state.adam_step(&mut params, std::slice::from_ref(&g)).unwrap();
            }
            params[0].data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![Tensor::vector(vec![1.0, 2.0])];
        let grads = vec![Tensor::vector(vec![1.0])];
        let mut state = OptimizerState::new(0.01, &params);
        assert!(state.adam_step(&mut params, &grads).is_err());
    }
}
