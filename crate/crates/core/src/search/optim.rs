//! SGD with momentum for network weights, Adam for architecture parameters.

use std::collections::BTreeMap;

use ndarray::{Array2, Zip};

use crate::autodiff::Matrix;
use crate::searchspace::{Gradients, ParamKey, SupernetState};

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: BTreeMap<ParamKey, Matrix>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    /// Updates only the arrays that appear in `grads`.
    pub fn step(&mut self, weights: &mut SupernetState, grads: &Gradients) {
        for (key, grad) in grads {
            let Some(param) = weights.get_mut(*key) else {
                continue;
            };
            let v = self
                .velocity
                .entry(*key)
                .or_insert_with(|| Array2::zeros(grad.dim()));
            let (mu, wd, lr) = (self.momentum, self.weight_decay, self.lr);
            Zip::from(&mut *v)
                .and(&mut *param)
                .and(grad)
                .for_each(|v, p, &g| {
                    *v = mu * *v + g + wd * *p;
                    *p -= lr * *v;
                });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Matrix,
    pub v: Matrix,
    pub t: u64,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, shape: (usize, usize)) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
            t: 0,
        }
    }

    pub fn step(&mut self, param: &mut Matrix, grad: &Matrix) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (lr, eps) = (self.lr, self.eps);
        Zip::from(param)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
}
