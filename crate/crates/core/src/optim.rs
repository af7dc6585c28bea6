//! First-order optimizers over a classifier's flat parameter vector.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::classifier::{BatchGrad, Classifier, ClassifierError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd {
        lr: f64,
        momentum: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerKind {
    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerKind::Sgd { lr, .. } | OptimizerKind::Adam { lr, .. } => lr,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, param_count: usize) -> Self {
        let second = match kind {
            OptimizerKind::Adam { .. } => vec![0.0; param_count],
            OptimizerKind::Sgd { .. } => Vec::new(),
        };
        Self {
            kind,
            first: vec![0.0; param_count],
            second,
            steps: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update to `model` from `g`.
    ///
    /// A non-finite gradient entry aborts the step before any parameter moves.
    pub fn step(&mut self, model: &mut Classifier, g: &BatchGrad) -> Result<(), ClassifierError> {
        let n = model.params().len();
        if g.grad.len() != n || self.first.len() != n {
            return Err(ClassifierError::ParameterCount {
                expected: n,
                actual: g.grad.len(),
            });
        }
        if let Some(index) = g.grad.iter().position(|v| !v.is_finite()) {
            return Err(ClassifierError::NonFiniteGradient { index });
        }
        self.steps += 1;
        let params = model.params_mut();
        match self.kind {
            OptimizerKind::Sgd { lr, momentum } => {
                if momentum == 0.0 {
                    for (p, gi) in params.iter_mut().zip(&g.grad) {
                        *p -= lr * gi;
                    }
                } else {
                    for ((p, gi), v) in params.iter_mut().zip(&g.grad).zip(&mut self.first) {
                        *v = momentum * *v + gi;
                        *p -= lr * *v;
                    }
                }
            }
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let t = self.steps as f64;
                let c1 = 1.0 - libm::pow(beta1, t);
                let c2 = 1.0 - libm::pow(beta2, t);
                for (((p, gi), m), v) in params
                    .iter_mut()
                    .zip(&g.grad)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    *m = beta1 * *m + (1.0 - beta1) * gi;
                    *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (libm::sqrt(v_hat) + eps);
                }
            }
        }
        Ok(())
    }
}
