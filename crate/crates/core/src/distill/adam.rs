use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::models::{LayerParams, Model};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first_moment: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            second_moment: first_moment.clone(),
            first_moment,
            step: 0,
        }
    }

    pub fn for_model(config: AdamConfig, model: &Model) -> Self {
        Self::new(config, model.param_tensors())
    }

    /// One update of `params` in place from `grads` (same order and shapes).
    pub fn step<'a, 'b>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor>,
        grads: impl IntoIterator<Item = &'b Tensor>,
    ) -> Result<()> {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        let grads: Vec<&Tensor> = grads.into_iter().collect();
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(shape_err!(
                "adam tracks {} tensors, got {} parameters and {} gradients",
                self.first_moment.len(),
                params.len(),
                grads.len()
            ));
        }
        for ((p, g), m) in params.iter().zip(&grads).zip(&self.first_moment) {
            p.check_same_shape(g)?;
            p.check_same_shape(m)?;
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *pi -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    /// Applies a step to every parameter of `model`.
    pub fn step_model(&mut self, model: &mut Model, grads: &[Option<LayerParams>]) -> Result<()> {
        let grads: Vec<&Tensor> = grads.iter().flatten().flat_map(|g| [&g.weight, &g.bias]).collect();
        self.step(model.param_tensors_mut(), grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_first_step_is_noop() {
        let mut p = Tensor::from_vec(vec![0.3, -1.2, 5.0]);
        let before = p.clone();
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        adam.step([&mut p], [&Tensor::zeros(&[3])]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::from_vec(vec![1.0, 1.0]);
        let cfg = AdamConfig::default();
        let mut adam = AdamState::new(cfg, [&p]);
        adam.step([&mut p], [&Tensor::from_vec(vec![0.37, -2.5])]).unwrap();
        // bias-corrected first step: lr·g/(|g|+ε)
        assert!((p.data()[0] - (1.0 - cfg.learning_rate * 0.37 / (0.37 + 1e-8))).abs() < 1e-15);
        assert!((p.data()[1] - (1.0 + cfg.learning_rate * 2.5 / (2.5 + 1e-8))).abs() < 1e-15);
        assert!(((1.0 - p.data()[0]) - cfg.learning_rate).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Tensor::from_vec(vec![1.0, 1.0]);
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        assert!(adam.step([&mut p], [&Tensor::zeros(&[3])]).is_err());
    }

    #[test]
    fn deterministic_trajectory() {
        let run = || {
            let mut p = Tensor::from_vec(vec![0.5, -0.5, 2.0]);
            let mut adam = AdamState::new(AdamConfig::default(), [&p]);
            for k in 0..50 {
                let g = p.map(|x| 2.0 * x + k as f64 * 0.01);
                adam.step([&mut p], [&g]).unwrap();
            }
            p
        };
        let a: Vec<u64> = run().data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = run().data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }
}
