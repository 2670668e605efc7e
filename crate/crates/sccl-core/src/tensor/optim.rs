//! First-order optimizers over a [`ParamStore`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tensor::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimAlgo {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub algo: OptimAlgo,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { algo: OptimAlgo::Adam, lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(Adam),
}

impl Optimizer {
    pub fn from_config(cfg: &OptimConfig) -> Self {
        match cfg.algo {
            OptimAlgo::Sgd => Optimizer::Sgd { lr: cfg.lr },
            OptimAlgo::Adam => Optimizer::Adam(Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)),
        }
    }

    /// Apply one update step from the gradients currently held in `params`.
    pub fn step(&mut self, params: &mut ParamStore) {
        match self {
            Optimizer::Sgd { lr } => {
                let lr = *lr;
                for (_, e) in params.iter_mut() {
                    sgd_update(e, lr);
                }
            }
            Optimizer::Adam(adam) => adam.step(params),
        }
    }
}

fn sgd_update(e: &mut crate::tensor::ParamEntry, lr: f64) {
    let crate::tensor::ParamEntry { value, grad } = e;
    for (v, g) in value.data_mut().iter_mut().zip(grad.data()) {
        *v -= lr * g;
    }
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &mut ParamStore) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (name, e) in params.iter_mut() {
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(e.value.shape()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(e.value.shape()));
            for i in 0..e.value.len() {
                let g = e.grad.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                e.value.data_mut()[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
