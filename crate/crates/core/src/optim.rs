use serde::{Deserialize, Serialize};

/// First-order update rule for a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn state(&self, n: usize) -> OptimizerState {
        match self {
            Optimizer::Sgd { .. } => OptimizerState { m: Vec::new(), v: Vec::new(), step: 0 },
            Optimizer::Adam { .. } => OptimizerState { m: vec![0.0; n], v: vec![0.0; n], step: 0 },
        }
    }

    pub fn apply(&self, params: &mut [f64], grad: &[f64], st: &mut OptimizerState) {
        st.step += 1;
        match *self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps } => {
                let b1c = 1.0 - beta1.powi(st.step as i32);
                let b2c = 1.0 - beta2.powi(st.step as i32);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut st.m).zip(&mut st.v) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / b1c) / ((*v / b2c).sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut p = vec![1.0, 2.0];
        let opt = Optimizer::Sgd { lr: 0.5 };
        let mut st = opt.state(2);
        opt.apply(&mut p, &[2.0, -2.0], &mut st);
        assert_eq!(p, vec![0.0, 3.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![0.0];
        let opt = Optimizer::adam(0.01);
        let mut st = opt.state(1);
        opt.apply(&mut p, &[123.0], &mut st);
        assert!((p[0] + 0.01).abs() < 1e-9);
    }
}
