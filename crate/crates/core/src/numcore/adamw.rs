//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamWState {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamWState {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::Dimension(format!(
                "adamw: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::Dimension(format!(
                    "adamw: parameter {i} has shape {:?}, gradient {:?}, moments {:?}",
                    p.shape(),
                    g.shape(),
                    self.first[i].shape()
                )));
            }
        }
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                pd[i] -= lr * weight_decay * pd[i];
                md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_decay() -> AdamWConfig {
        AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut p = vec![Tensor::scalar(0.7)];
        let mut st = AdamWState::new(no_decay(), &p);
        st.step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(p[0].item(), 0.7);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_hand_evaluated() {
        // m̂ = 1, v̂ = 1 after bias correction: p - lr / (1 + eps)
        let mut p = vec![Tensor::scalar(1.0)];
        let mut st = AdamWState::new(no_decay(), &p);
        st.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        let expect = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((p[0].item() - expect).abs() < 1e-15);
        assert!((p[0].item() - 0.999).abs() < 1e-10);
    }

    #[test]
    fn two_steps_descend_a_quadratic() {
        let loss = |x: f64| (x - 3.0) * (x - 3.0);
        let mut p = vec![Tensor::scalar(0.0)];
        let before = loss(0.0);
        let mut st = AdamWState::new(no_decay(), &p);
        for _ in 0..2 {
            let g = 2.0 * (p[0].item() - 3.0);
            st.step(&mut p, &[Tensor::scalar(g)]).unwrap();
        }
        assert!(loss(p[0].item()) < before);
        assert_eq!(st.step_count(), 2);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut p = vec![Tensor::scalar(2.0)];
        let mut st = AdamWState::new(AdamWConfig::default(), &p);
        st.step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
        assert!((p[0].item() - 2.0 * (1.0 - 1e-5)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::zeros(&[2, 2])];
        let mut st = AdamWState::new(no_decay(), &p);
        assert!(st.step(&mut p, &[Tensor::zeros(&[3])]).is_err());
        assert_eq!(st.step_count(), 0);
    }
}
