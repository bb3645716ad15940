use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// First-order update rule with its running state.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: i32,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    },
    Sgd {
        lr: f64,
    },
}

impl Optimizer {
    pub fn adam(params: &ModelParams, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    /// Applies one update; `grads` follow the canonical tensor order.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Vec<f64>]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.tensors.iter_mut().zip(grads) {
                    for (w, gi) in p.tensor.data_mut().iter_mut().zip(g) {
                        *w -= *lr * gi;
                    }
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => {
                *step += 1;
                let c1 = 1.0 - beta1.powi(*step);
                let c2 = 1.0 - beta2.powi(*step);
                for (((p, g), m), v) in params.tensors.iter_mut().zip(grads).zip(m).zip(v) {
                    let w = p.tensor.data_mut();
                    for i in 0..w.len() {
                        m[i] = *beta1 * m[i] + (1.0 - *beta1) * g[i];
                        v[i] = *beta2 * v[i] + (1.0 - *beta2) * g[i] * g[i];
                        let mhat = m[i] / c1;
                        let vhat = v[i] / c2;
                        w[i] -= *lr * mhat / (vhat.sqrt() + *eps);
                    }
                }
            }
        }
    }
}
