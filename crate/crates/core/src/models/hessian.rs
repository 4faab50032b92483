//! Input-space curvature: dense Hessians for small inputs and a Hutchinson
//! trace estimator for everything else.

use super::objective::{dot, InputObjective};
use crate::error::{param_err, Result};
use crate::rng::Rng;

/// Largest input dimension for which a dense Hessian is formed.
pub const HESSIAN_DIM_CAP: usize = 256;

const FD_STEP: f64 = 1e-5;

/// Symmetric square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl SquareMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }

    /// Smallest eigenvalue via cyclic Jacobi rotations.
    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.dim;
        let mut a = self.data.clone();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i * n + j] * a[i * n + j])
                .sum();
            if off < 1e-22 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[p * n + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - s * aqk;
                        a[q * n + k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[i * n + i]).fold(f64::INFINITY, f64::min)
    }
}

/// Central differences of the analytic gradient, symmetrized.
pub fn hessian_input(obj: &dyn InputObjective, x: &[f64]) -> Result<SquareMatrix> {
    let d = obj.input_dim();
    if d > HESSIAN_DIM_CAP {
        return param_err(format!(
            "input dimension {d} exceeds the dense Hessian cap of {HESSIAN_DIM_CAP}; use hutchinson_trace"
        ));
    }
    if x.len() != d {
        return crate::error::dim_err(format!("point has {} values, objective expects {d}", x.len()));
    }
    let mut raw = vec![0.0; d * d];
    let mut xp = x.to_vec();
    for j in 0..d {
        xp[j] = x[j] + FD_STEP;
        let gp = obj.gradient(&xp);
        xp[j] = x[j] - FD_STEP;
        let gm = obj.gradient(&xp);
        xp[j] = x[j];
        for i in 0..d {
            raw[i * d + j] = (gp[i] - gm[i]) / (2.0 * FD_STEP);
        }
    }
    let mut data = raw.clone();
    for i in 0..d {
        for j in 0..d {
            data[i * d + j] = 0.5 * (raw[i * d + j] + raw[j * d + i]);
        }
    }
    Ok(SquareMatrix { dim: d, data })
}

/// Hutchinson estimate of `Tr(∇²L)` with Rademacher probes. Returns
/// `(estimate, standard error)`.
pub fn hutchinson_trace(obj: &dyn InputObjective, x: &[f64], probes: usize, rng: &mut Rng) -> Result<(f64, f64)> {
    if probes < 2 {
        return param_err("hutchinson_trace needs at least two probes");
    }
    let d = obj.input_dim();
    if x.len() != d {
        return crate::error::dim_err(format!("point has {} values, objective expects {d}", x.len()));
    }
    let mut samples = Vec::with_capacity(probes);
    let mut xp = vec![0.0; d];
    for _ in 0..probes {
        let v: Vec<f64> = (0..d).map(|_| rng.rademacher()).collect();
        xp.iter_mut().zip(x.iter().zip(&v)).for_each(|(p, (a, b))| *p = a + FD_STEP * b);
        let gp = obj.gradient(&xp);
        xp.iter_mut().zip(x.iter().zip(&v)).for_each(|(p, (a, b))| *p = a - FD_STEP * b);
        let gm = obj.gradient(&xp);
        let hv: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * FD_STEP)).collect();
        samples.push(dot(&v, &hv));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LossSpec, MlpModel, ModelLoss, Quadratic};

    #[test]
    fn quadratic_hessian_is_exact() {
        let a = vec![2.0, 0.5, -1.0, 0.5, 3.0, 0.25, -1.0, 0.25, 1.5];
        let q = Quadratic::new(a.clone(), vec![0.1, -0.2, 0.3], 0.7).unwrap();
        let h = hessian_input(&q, &[0.3, -0.1, 0.9]).unwrap();
        for (x, y) in h.data.iter().zip(&a) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn linear_model_squared_loss_hessian_is_outer_product() {
        let w = [0.4, -0.7, 1.2];
        let m = MlpModel::from_params(vec![3, 1], vec![w[0], w[1], w[2], 0.2]).unwrap();
        let spec = LossSpec::mse(vec![0.5]);
        let h = hessian_input(&ModelLoss::new(&m, &spec).unwrap(), &[0.1, 0.2, 0.3]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((h.get(i, j) - w[i] * w[j]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn mlp_hessian_symmetric() {
        let m = MlpModel::init(vec![10, 8, 3], &mut Rng::new(3)).unwrap();
        let spec = LossSpec::cross_entropy(1);
        let x: Vec<f64> = (0..10).map(|i| 0.1 * i as f64 - 0.4).collect();
        let h = hessian_input(&ModelLoss::new(&m, &spec).unwrap(), &x).unwrap();
        assert!(h.max_asymmetry() <= 1e-6);
    }

    #[test]
    fn dimension_cap_enforced() {
        let q = Quadratic::half_norm(HESSIAN_DIM_CAP + 1);
        let err = hessian_input(&q, &vec![0.0; HESSIAN_DIM_CAP + 1]).unwrap_err();
        assert!(err.to_string().contains("hutchinson_trace"));
    }

    #[test]
    fn hutchinson_exact_on_diagonal_quadratic() {
        // Rademacher probes have zero variance on a diagonal matrix.
        let d = 300;
        let q = Quadratic::half_norm(d);
        let (t, se) = hutchinson_trace(&q, &vec![0.5; d], 8, &mut Rng::new(1)).unwrap();
        assert!((t - d as f64).abs() < 1e-5, "{t}");
        assert!(se < 1e-5);
    }

    #[test]
    fn hutchinson_agrees_with_dense_trace() {
        let m = MlpModel::init(vec![12, 10, 4], &mut Rng::new(8)).unwrap();
        let spec = LossSpec::cross_entropy(2);
        let obj = ModelLoss::new(&m, &spec).unwrap();
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let exact = hessian_input(&obj, &x).unwrap().trace();
        let (est, se) = hutchinson_trace(&obj, &x, 4000, &mut Rng::new(9)).unwrap();
        assert!((est - exact).abs() <= 4.0 * se + 1e-6, "{est} vs {exact} (se {se})");
    }

    #[test]
    fn min_eigenvalue_of_known_matrix() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let m = SquareMatrix { dim: 2, data: vec![2.0, 1.0, 1.0, 2.0] };
        assert!((m.min_eigenvalue() - 1.0).abs() < 1e-12);
    }
}
