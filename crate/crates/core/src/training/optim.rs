use serde::{Deserialize, Serialize};

use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    #[serde(alias = "adam")]
    AdaptiveMoment,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Parameter update rule with its running state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    m: Option<ParamStore>,
    v: Option<ParamStore>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            m: None,
            v: None,
        }
    }

    /// Applies one update of `params` against `grads` (same keys).
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (name, p) in params.iter_mut() {
                    if let Ok(g) = grads.get(name) {
                        for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                            *x -= self.lr * d;
                        }
                    }
                }
            }
            OptimizerKind::AdaptiveMoment => {
                self.step += 1;
                let m = self.m.get_or_insert_with(|| params.zeros_like());
                let v = self.v.get_or_insert_with(|| params.zeros_like());
                let c1 = 1.0 - ADAM_BETA1.powi(self.step);
                let c2 = 1.0 - ADAM_BETA2.powi(self.step);
                for (name, p) in params.iter_mut() {
                    let Ok(g) = grads.get(name) else { continue };
                    let (Some(mt), Some(vt)) = (m.get_mut(name), v.get_mut(name)) else {
                        continue;
                    };
                    for (((x, d), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(mt.data_mut())
                        .zip(vt.data_mut())
                    {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * d;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * d * d;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *x -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn store(v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(vec![v]));
        p
    }

    #[test]
    fn sgd_step() {
        let mut p = store(1.0);
        Optimizer::new(OptimizerKind::Sgd, 0.1).step(&mut p, &store(2.0));
        assert!((p.get("w").unwrap().data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = store(1.0);
        Optimizer::new(OptimizerKind::AdaptiveMoment, 0.01).step(&mut p, &store(5.0));
        assert!((p.get("w").unwrap().data()[0] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn zero_rate_is_a_no_op() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::AdaptiveMoment] {
            let mut p = store(1.0);
            Optimizer::new(kind, 0.0).step(&mut p, &store(3.0));
            assert_eq!(p, store(1.0));
        }
    }
}
