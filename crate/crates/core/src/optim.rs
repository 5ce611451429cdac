//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::encoder::{OptimizerState, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    state: OptimizerState,
}

impl AdamW {
    pub fn new(config: AdamWConfig, shapes: &[Vec<usize>]) -> Self {
        AdamW {
            config,
            state: OptimizerState {
                step: 0,
                first_moment: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
                second_moment: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            },
        }
    }

    pub fn from_state(config: AdamWConfig, state: OptimizerState) -> Self {
        AdamW { config, state }
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn steps_taken(&self) -> u64 {
        self.state.step
    }

    /// One update. `params` and `grads` must follow the same tensor order
    /// the optimizer was created with.
    pub fn step(&mut self, params: Vec<&mut Tensor<f32>>, grads: Vec<&Tensor<f32>>, lr: f64) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        assert_eq!(params.len(), self.state.first_moment.len(), "optimizer state size mismatch");
        self.state.step += 1;
        let c = self.config;
        let t = self.state.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let eps = c.eps as f32;
        let decay = (lr * c.weight_decay) as f32;
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.state.first_moment.iter_mut())
            .zip(self.state.second_moment.iter_mut())
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                let denom = v.data[i].sqrt() / bc2_sqrt + eps;
                p.data[i] -= decay * p.data[i];
                p.data[i] -= step_size * m.data[i] / denom;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_each_weight_by_about_lr() {
        let mut p = Tensor {
            shape: vec![3],
            data: vec![1.0f32, -2.0, 0.5],
        };
        let g = Tensor {
            shape: vec![3],
            data: vec![0.3f32, -4.0, 0.0],
        };
        let mut opt = AdamW::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            &[vec![3]],
        );
        opt.step(vec![&mut p], vec![&g], 0.1);
        assert!((p.data[0] - 0.9).abs() < 1e-4);
        assert!((p.data[1] + 1.9).abs() < 1e-4);
        assert_eq!(p.data[2], 0.5);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn weight_decay_is_decoupled_from_the_gradient() {
        let mut p = Tensor {
            shape: vec![1],
            data: vec![2.0f32],
        };
        let g = Tensor {
            shape: vec![1],
            data: vec![0.0f32],
        };
        let mut opt = AdamW::new(AdamWConfig::default(), &[vec![1]]);
        opt.step(vec![&mut p], vec![&g], 0.5);
        assert!((p.data[0] - 2.0 * (1.0 - 0.5 * 0.01)).abs() < 1e-6);
    }
}
