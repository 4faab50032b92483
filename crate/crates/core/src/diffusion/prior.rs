//! Gaussian image prior used as the linear part of the denoiser.
//!
//! The covariance is represented by its leading `r` eigenpairs plus an
//! isotropic tail `tail_var * I` on the orthogonal complement. For
//! `x_t = sqrt(abar) x0 + sqrt(1 - abar) eps` the posterior mean of `x0` under
//! this prior is
//!
//! ```text
//! E[x0 | x_t] = m + g_tail z + sum_i (g_i - g_tail) v_i v_i^T z,   z = x_t - sqrt(abar) m
//! g(lambda) = sqrt(abar) lambda / (abar lambda + 1 - abar)
//! ```

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Result};
use crate::grid::ImageGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    /// Unit eigenvectors, one per row.
    pub basis: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub tail_var: f64,
}

fn gain(lambda: f64, abar: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    abar.sqrt() * lambda / (abar * lambda + 1.0 - abar)
}

fn error_var(lambda: f64, abar: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda * (1.0 - abar) / (abar * lambda + 1.0 - abar)
}

impl GaussianPrior {
    /// Sample mean and top-`rank` principal components of `data`.
    pub fn fit(data: &[ImageGrid], rank: usize) -> Result<Self> {
        let cells = match data.first() {
            Some(g) => g.len(),
            None => return param_err("cannot fit a prior to an empty set"),
        };
        if data.iter().any(|g| g.len() != cells) {
            return dim_err("prior fit needs grids of one size");
        }
        if rank >= cells {
            return param_err(format!("prior rank {rank} must be below the cell count {cells}"));
        }
        let n = data.len() as f64;
        let mut mean = vec![0.0; cells];
        for g in data {
            mean.iter_mut().zip(g.data()).for_each(|(m, v)| *m += v / n);
        }
        let mut cov = DMatrix::<f64>::zeros(cells, cells);
        for g in data {
            let c = DVector::from_iterator(cells, g.data().iter().zip(&mean).map(|(v, m)| v - m));
            cov.syger(1.0 / n, &c, &c, 1.0);
        }
        let total = cov.trace();
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..cells).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = &order[..rank];
        let eigenvalues: Vec<f64> = top.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
        let basis = top.iter().map(|&k| eig.eigenvectors.column(k).iter().copied().collect()).collect();
        let tail_var = ((total - eigenvalues.iter().sum::<f64>()) / (cells - rank) as f64).max(0.0);
        Ok(Self { mean, basis, eigenvalues, tail_var })
    }

    /// `N(mean, var I)` with no principal components.
    pub fn isotropic(cells: usize, mean: f64, var: f64) -> Self {
        Self { mean: vec![mean; cells], basis: Vec::new(), eigenvalues: Vec::new(), tail_var: var }
    }

    pub fn cells(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.cells();
        if self.basis.len() != self.eigenvalues.len() || self.basis.iter().any(|v| v.len() != cells) {
            return dim_err("prior basis does not match its eigenvalues or mean");
        }
        if self.rank() >= cells.max(1) {
            return param_err("prior rank must be below the cell count");
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !self.eigenvalues.iter().all(|&v| finite_nonneg(v)) || !finite_nonneg(self.tail_var) {
            return param_err("prior variances must be finite and non-negative");
        }
        Ok(())
    }

    /// Average per-cell variance.
    pub fn total_var(&self) -> f64 {
        let cells = self.cells() as f64;
        (self.eigenvalues.iter().sum::<f64>() + self.tail_var * (cells - self.rank() as f64)) / cells
    }

    /// Posterior mean of `x0` given `x_t` at cumulative signal level `abar`.
    pub fn posterior_mean(&self, x_t: &[f64], abar: f64) -> Vec<f64> {
        let sa = abar.sqrt();
        let z: Vec<f64> = x_t.iter().zip(&self.mean).map(|(x, m)| x - sa * m).collect();
        let g_tail = gain(self.tail_var, abar);
        let mut out: Vec<f64> = self.mean.iter().zip(&z).map(|(m, z)| m + g_tail * z).collect();
        for (v, &lam) in self.basis.iter().zip(&self.eigenvalues) {
            let coef = (gain(lam, abar) - g_tail) * v.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
            out.iter_mut().zip(v).for_each(|(o, vi)| *o += coef * vi);
        }
        out
    }

    /// Average per-cell error variance of [`Self::posterior_mean`] for data drawn from the prior.
    pub fn posterior_error_var(&self, abar: f64) -> f64 {
        let cells = self.cells() as f64;
        let head: f64 = self.eigenvalues.iter().map(|&l| error_var(l, abar)).sum();
        (head + error_var(self.tail_var, abar) * (cells - self.rank() as f64)) / cells
    }
}
