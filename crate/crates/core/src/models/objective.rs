//! Scalar objectives over an input vector, used by the curvature and
//! conjecture checks.

use super::loss::LossSpec;
use super::mlp::MlpModel;
use crate::error::{dim_err, Result};

pub trait InputObjective: Sync {
    fn input_dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// A model paired with a loss; `L(x) = loss(f(x))`.
#[derive(Debug, Clone, Copy)]
pub struct ModelLoss<'a> {
    pub model: &'a MlpModel,
    pub spec: &'a LossSpec,
}

impl<'a> ModelLoss<'a> {
    pub fn new(model: &'a MlpModel, spec: &'a LossSpec) -> Result<Self> {
        spec.check(model.output_dim())?;
        Ok(Self { model, spec })
    }
}

impl InputObjective for ModelLoss<'_> {
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.spec.value(&self.model.forward_unchecked(x))
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.model.loss_and_grad_input_unchecked(x, self.spec).1
    }
}

/// `L(x) = 0.5 x^T A x + b^T x + c` with symmetric `A` (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    dim: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: f64,
}

impl Quadratic {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: f64) -> Result<Self> {
        let dim = b.len();
        if a.len() != dim * dim {
            return dim_err(format!("matrix has {} entries for dimension {dim}", a.len()));
        }
        let mut sym = a.clone();
        for i in 0..dim {
            for j in 0..dim {
                sym[i * dim + j] = 0.5 * (a[i * dim + j] + a[j * dim + i]);
            }
        }
        Ok(Self { dim, a: sym, b, c })
    }

    /// `0.5 ||x||^2`
    pub fn half_norm(dim: usize) -> Self {
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            a[i * dim + i] = 1.0;
        }
        Self { dim, a, b: vec![0.0; dim], c: 0.0 }
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.a[i * self.dim + i]).sum()
    }
}

impl InputObjective for Quadratic {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        let ax = self.gradient_homogeneous(x);
        0.5 * dot(x, &ax) + dot(&self.b, x) + self.c
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.gradient_homogeneous(x);
        g.iter_mut().zip(&self.b).for_each(|(g, b)| *g += b);
        g
    }
}

impl Quadratic {
    fn gradient_homogeneous(&self, x: &[f64]) -> Vec<f64> {
        self.a.chunks_exact(self.dim).map(|row| dot(row, x)).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
