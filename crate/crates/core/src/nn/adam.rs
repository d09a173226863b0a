use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    /// Restores accumulators, e.g. from a checkpoint.
    pub fn restore(&mut self, step: u64, first: Vec<Tensor>, second: Vec<Tensor>) -> Result<()> {
        let same = |a: &[Tensor], b: &[Tensor]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape())
        };
        if !same(&first, &self.first) || !same(&second, &self.second) {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        self.step = step;
        self.first = first;
        self.second = second;
        Ok(())
    }

    pub fn apply(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Shape(format!(
                    "parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
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
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec1(v: &[f64]) -> Tensor {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut params = vec![vec1(&[1.0, -2.0])];
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &params);
        adam.apply(&mut params, &[vec1(&[1.0, 1.0])]).unwrap();
        let before = params.clone();
        let m_before = adam.first_moments()[0].data()[0];
        adam.apply(&mut params, &[vec1(&[0.0, 0.0])]).unwrap();
        // m decays by beta1; the parameter still moves along the decayed momentum
        assert!((adam.first_moments()[0].data()[0] - 0.9 * m_before).abs() < 1e-15);
        assert_eq!(adam.step_count(), 2);

        let mut fresh = vec![vec1(&[1.0, -2.0])];
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &fresh);
        adam.apply(&mut fresh, &[vec1(&[0.0, 0.0])]).unwrap();
        assert_eq!(fresh[0].data(), &[1.0, -2.0]);
        assert!(before[0].data()[0] != params[0].data()[0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        let lr = 0.01;
        let mut params = vec![vec1(&[0.5, 0.5, 0.5])];
        let mut adam = Adam::new(AdamConfig::with_lr(lr), &params);
        adam.apply(&mut params, &[vec1(&[3.0, -0.2, 1e-3])]).unwrap();
        // closed form: m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps)
        for (p, g) in params[0].data().iter().zip([3.0_f64, -0.2, 1e-3]) {
            let expected = 0.5 - lr * g / (g.abs() + 1e-8);
            assert!((p - expected).abs() < 1e-15);
            assert!(((p - 0.5).abs() - lr).abs() < 1e-5 * lr / 1e-3);
        }
    }

    #[test]
    fn quadratic_loss_decreases() {
        // f(p) = 0.5 * |p - c|^2
        let c = [3.0, -1.0, 0.25];
        let mut params = vec![vec1(&[0.0, 0.0, 0.0])];
        let mut adam = Adam::new(AdamConfig::with_lr(0.02), &params);
        let loss = |p: &Tensor| -> f64 {
            p.data().iter().zip(c).map(|(x, ci)| 0.5 * (x - ci).powi(2)).sum()
        };
        let mut history = vec![loss(&params[0])];
        for _ in 0..100 {
            let g: Vec<f64> = params[0].data().iter().zip(c).map(|(x, ci)| x - ci).collect();
            adam.apply(&mut params, &[vec1(&g)]).unwrap();
            history.push(loss(&params[0]));
        }
        // strictly decreasing once the moment estimates settle
        for w in history[5..].windows(2) {
            assert!(w[1] < w[0], "{history:?}");
        }
        assert!(history[100] < 0.5 * history[0]);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut params = vec![vec1(&[0.0, 0.0])];
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &params);
        assert!(adam.apply(&mut params, &[vec1(&[1.0])]).is_err());
        assert_eq!(adam.step_count(), 0);
    }
}
