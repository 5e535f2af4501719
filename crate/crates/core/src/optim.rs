//! First-order update rules shared by the trainer and embedding optimizers.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::OptimizerKind;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub enum Optimizer {
    GradientDescent { lr: f64 },
    Adam {
        lr: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, len: usize) -> Self {
        match kind {
            OptimizerKind::GradientDescent => Optimizer::GradientDescent { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                m: vec![0.0; len],
                v: vec![0.0; len],
                t: 0,
            },
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        match self {
            Optimizer::GradientDescent { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam { lr, m, v, t } => {
                *t += 1;
                let c1 = 1.0 - libm::pow(BETA1, *t as f64);
                let c2 = 1.0 - libm::pow(BETA2, *t as f64);
                for i in 0..params.len() {
                    m[i] = BETA1 * m[i] + (1.0 - BETA1) * grad[i];
                    v[i] = BETA2 * v[i] + (1.0 - BETA2) * grad[i] * grad[i];
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    params[i] -= *lr * mh / (libm::sqrt(vh) + EPS);
                }
            }
        }
    }
}
