use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Result};

/// Loss attached to a model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossSpec {
    /// `0.5 * ||f(x) - target||^2`
    MseToTarget { target: Vec<f64> },
    /// `-log softmax(f(x))[class]`
    CrossEntropyToClass { class: usize },
    /// `weights . f(x)`; linear in the output.
    Score { weights: Vec<f64> },
}

impl LossSpec {
    pub fn mse(target: Vec<f64>) -> Self {
        LossSpec::MseToTarget { target }
    }

    pub fn cross_entropy(class: usize) -> Self {
        LossSpec::CrossEntropyToClass { class }
    }

    pub fn parse(name: &str, arg: &str) -> Result<Self> {
        match name {
            "cross-entropy" | "ce" => arg
                .parse()
                .map(LossSpec::cross_entropy)
                .or_else(|e| param_err(format!("class index: {e}"))),
            "mse" => {
                let target = arg
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .or_else(|e| param_err(format!("mse target: {e}")))?;
                Ok(LossSpec::mse(target))
            }
            other => param_err(format!("unknown loss spec `{other}`")),
        }
    }

    pub fn check(&self, out_dim: usize) -> Result<()> {
        match self {
            LossSpec::MseToTarget { target: v } | LossSpec::Score { weights: v } => {
                if v.len() != out_dim {
                    return dim_err(format!("loss vector has {} entries, model outputs {out_dim}", v.len()));
                }
            }
            LossSpec::CrossEntropyToClass { class } => {
                if *class >= out_dim {
                    return param_err(format!("class {class} out of range for {out_dim} outputs"));
                }
            }
        }
        Ok(())
    }

    /// Loss value and its gradient with respect to the model output.
    pub fn value_and_grad(&self, out: &[f64]) -> (f64, Vec<f64>) {
        match self {
            LossSpec::MseToTarget { target } => {
                let diff: Vec<f64> = out.iter().zip(target).map(|(o, t)| o - t).collect();
                let value = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
                (value, diff)
            }
            LossSpec::CrossEntropyToClass { class } => {
                let p = softmax(out);
                let value = log_sum_exp(out) - out[*class];
                let mut grad = p;
                grad[*class] -= 1.0;
                (value, grad)
            }
            LossSpec::Score { weights } => {
                (out.iter().zip(weights).map(|(o, w)| o * w).sum(), weights.clone())
            }
        }
    }

    pub fn value(&self, out: &[f64]) -> f64 {
        match self {
            LossSpec::CrossEntropyToClass { class } => log_sum_exp(out) - out[*class],
            _ => self.value_and_grad(out).0,
        }
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_is_stable_for_large_logits() {
        let spec = LossSpec::cross_entropy(0);
        let (v, g) = spec.value_and_grad(&[1000.0, 0.0]);
        assert!(v.abs() < 1e-12);
        assert!(g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn parse_specs() {
        assert_eq!(LossSpec::parse("ce", "2").unwrap(), LossSpec::cross_entropy(2));
        assert_eq!(LossSpec::parse("mse", "1, 2").unwrap(), LossSpec::mse(vec![1.0, 2.0]));
        assert!(matches!(LossSpec::parse("hinge", "0"), Err(crate::Error::Parameter(_))));
    }
}
