use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

/// Per-parameter moment buffers for one training run.
pub(crate) struct OptimizerState {
    optimizer: Optimizer,
    learning_rate: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: i32,
}

impl OptimizerState {
    pub(crate) fn new(optimizer: Optimizer, learning_rate: f64) -> Self {
        Self {
            optimizer,
            learning_rate,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub(crate) fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        debug_assert_eq!(params.len(), grads.len());
        match self.optimizer {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= self.learning_rate * d;
                    }
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                if self.first.is_empty() {
                    self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
                    self.second = self.first.clone();
                }
                self.steps += 1;
                let c1 = 1.0 - beta1.powi(self.steps);
                let c2 = 1.0 - beta2.powi(self.steps);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((w, &d), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * d;
                        *vi = beta2 * *vi + (1.0 - beta2) * d * d;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *w -= self.learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
    }
}
