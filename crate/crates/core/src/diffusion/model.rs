//! Toy DDPM with a preconditioned MLP denoiser.
//!
//! The clean-image estimate is a linear Gaussian denoiser plus a learned
//! correction,
//!
//! ```text
//! x0_hat = W_t(x_t) + c_out(t) * F(c_in(t) * (x_t - sqrt(abar) * m), emb(t))
//! ```
//!
//! where `W_t` is the posterior mean under a [`GaussianPrior`] fitted to the
//! training data, `m` its pixel mean, `c_in = 1 / sqrt(abar * s2 + 1 - abar)`
//! with `s2` the average pixel variance, and `c_out` the root-mean-square
//! error of `W_t`. An MLP `F` with zero output is exactly the linear
//! denoiser. The noise prediction used by the sampler is
//! `eps_hat = (x_t - sqrt(abar) * x0_hat) / sqrt(1 - abar)`.

use serde::{Deserialize, Serialize};

use super::prior::GaussianPrior;
use super::schedule::{NoiseSchedule, ScheduleParams};
use crate::error::{dim_err, param_err, Error, Result};
use crate::grid::{ImageGrid, Shape};
use crate::models::{MlpCheckpoint, MlpModel, TimeEmbedding};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    schedule: NoiseSchedule,
    denoiser: MlpModel,
    shape: Shape,
    embed_dim: usize,
    prior: GaussianPrior,
    /// Cached embeddings for t = 0..=T.
    embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Precond {
    pub abar: f64,
    pub sqrt_abar: f64,
    pub sqrt_one_minus_abar: f64,
    pub c_out: f64,
    pub c_in: f64,
}

impl Precond {
    /// `d eps_hat / d F` for every cell.
    pub fn eps_per_output(&self) -> f64 {
        -self.sqrt_abar * self.c_out / self.sqrt_one_minus_abar
    }
}

impl DiffusionModel {
    pub fn new(
        schedule: NoiseSchedule,
        denoiser: MlpModel,
        shape: Shape,
        embed_dim: usize,
        prior: GaussianPrior,
    ) -> Result<Self> {
        if !embed_dim.is_multiple_of(2) {
            return param_err("time embedding dimension must be even");
        }
        if denoiser.input_dim() != shape.len() + embed_dim {
            return dim_err(format!(
                "denoiser input {} != grid cells {} + embedding {embed_dim}",
                denoiser.input_dim(),
                shape.len()
            ));
        }
        if denoiser.output_dim() != shape.len() {
            return dim_err(format!("denoiser output {} != grid cells {}", denoiser.output_dim(), shape.len()));
        }
        prior.validate()?;
        if prior.cells() != shape.len() {
            return dim_err(format!("prior covers {} cells, grid has {}", prior.cells(), shape.len()));
        }
        if !(prior.total_var() > 0.0) {
            return param_err("prior variance must be positive");
        }
        let embeddings = (0..=schedule.timesteps()).map(|t| TimeEmbedding::new(t, embed_dim).embedding).collect();
        Ok(Self { schedule, denoiser, shape, embed_dim, prior, embeddings })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn denoiser(&self) -> &MlpModel {
        &self.denoiser
    }

    pub(crate) fn denoiser_mut(&mut self) -> &mut MlpModel {
        &mut self.denoiser
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn prior(&self) -> &GaussianPrior {
        &self.prior
    }

    pub(crate) fn precond(&self, t: usize) -> Precond {
        let abar = self.schedule.alpha_bar(t);
        Precond {
            abar,
            sqrt_abar: abar.sqrt(),
            sqrt_one_minus_abar: (1.0 - abar).sqrt(),
            c_out: self.prior.posterior_error_var(abar).sqrt(),
            c_in: 1.0 / (abar * self.prior.total_var() + 1.0 - abar).sqrt(),
        }
    }

    /// Network input for `x_t` at timestep `t`.
    pub(crate) fn net_input(&self, x_t: &[f64], t: usize, p: &Precond) -> Vec<f64> {
        let mut input: Vec<f64> =
            x_t.iter().zip(&self.prior.mean).map(|(v, m)| p.c_in * (v - p.sqrt_abar * m)).collect();
        input.extend_from_slice(&self.embeddings[t]);
        input
    }

    /// Clean-image estimate given the raw network output.
    pub(crate) fn x0_from_output(&self, x_t: &[f64], out: &[f64], p: &Precond) -> Vec<f64> {
        let mut x0 = self.prior.posterior_mean(x_t, p.abar);
        x0.iter_mut().zip(out).for_each(|(x, f)| *x += p.c_out * f);
        x0
    }

    pub(crate) fn eps_from_x0(x_t: &[f64], x0: &[f64], p: &Precond) -> Vec<f64> {
        x_t.iter().zip(x0).map(|(x, x0)| (x - p.sqrt_abar * x0) / p.sqrt_one_minus_abar).collect()
    }

    /// Predicted noise `eps_hat(x_t, t)`, `1 <= t <= T`.
    pub fn predict_eps(&self, x_t: &ImageGrid, t: usize) -> Result<Vec<f64>> {
        self.check_grid(x_t)?;
        self.schedule.check_timestep(t, 1)?;
        Ok(self.predict_eps_raw(x_t.data(), t))
    }

    fn predict_eps_raw(&self, x_t: &[f64], t: usize) -> Vec<f64> {
        let p = self.precond(t);
        let out = self.denoiser.forward_unchecked(&self.net_input(x_t, t, &p));
        Self::eps_from_x0(x_t, &self.x0_from_output(x_t, &out, &p), &p)
    }

    fn check_grid(&self, x: &ImageGrid) -> Result<()> {
        if x.shape() != self.shape {
            return dim_err(format!("grid shape {} vs model shape {}", x.shape(), self.shape));
        }
        Ok(())
    }

    /// `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`, unclamped.
    pub fn forward_noise(&self, x0: &ImageGrid, t: usize, rng: &mut Rng) -> Result<ImageGrid> {
        self.check_grid(x0)?;
        self.schedule.check_timestep(t, 0)?;
        if t == 0 {
            return Ok(ImageGrid::from_raw(self.shape, x0.data().to_vec(), false));
        }
        let eps = rng.normal_vec(x0.len(), 1.0);
        Ok(ImageGrid::from_raw(self.shape, noised(x0.data(), &eps, &self.schedule, t), false))
    }

    /// Posterior mean `(x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)`.
    pub fn posterior_mean(&self, x_t: &[f64], eps_hat: &[f64], t: usize) -> Vec<f64> {
        let s = &self.schedule;
        let coef = s.beta(t) / (1.0 - s.alpha_bar(t)).sqrt();
        let inv_sqrt_alpha = 1.0 / s.alpha(t).sqrt();
        x_t.iter().zip(eps_hat).map(|(x, e)| inv_sqrt_alpha * (x - coef * e)).collect()
    }

    /// One ancestral DDPM step `x_t -> x_{t-1}` with variance `beta_t`
    /// (no noise at `t = 1`).
    pub fn reverse_step(&self, x_t: &ImageGrid, t: usize, rng: &mut Rng) -> Result<ImageGrid> {
        self.check_grid(x_t)?;
        self.schedule.check_timestep(t, 1)?;
        Ok(ImageGrid::from_raw(self.shape, self.reverse_step_raw(x_t.data(), t, rng), false))
    }

    fn reverse_step_raw(&self, x_t: &[f64], t: usize, rng: &mut Rng) -> Vec<f64> {
        let eps_hat = self.predict_eps_raw(x_t, t);
        let mut mean = self.posterior_mean(x_t, &eps_hat, t);
        if t > 1 {
            let sigma = self.schedule.beta(t).sqrt();
            mean.iter_mut().for_each(|m| *m += sigma * rng.normal());
        }
        mean
    }

    /// Forward-noise to `t_star`, run the reverse chain `t_star..=1`, clamp.
    pub fn purify(&self, x: &ImageGrid, t_star: usize, rng: &mut Rng) -> Result<ImageGrid> {
        self.check_grid(x)?;
        self.schedule.check_timestep(t_star, 0)?;
        if t_star == 0 {
            return Ok(x.clone());
        }
        let mut cur = self.forward_noise(x, t_star, rng)?.into_vec();
        for t in (1..=t_star).rev() {
            cur = self.reverse_step_raw(&cur, t, rng);
        }
        Ok(ImageGrid::from_raw(self.shape, cur, false).clamped())
    }

    /// Full ancestral sample from pure noise.
    pub fn sample(&self, rng: &mut Rng) -> ImageGrid {
        let mut cur = rng.normal_vec(self.shape.len(), 1.0);
        for t in (1..=self.schedule.timesteps()).rev() {
            cur = self.reverse_step_raw(&cur, t, rng);
        }
        ImageGrid::from_raw(self.shape, cur, false)
    }
}

pub(crate) fn noised(x0: &[f64], eps: &[f64], schedule: &NoiseSchedule, t: usize) -> Vec<f64> {
    let a = schedule.alpha_bar(t).sqrt();
    let b = (1.0 - schedule.alpha_bar(t)).sqrt();
    x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

/// JSON checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionCheckpoint {
    pub schedule: ScheduleParams,
    pub shape: Shape,
    pub embed_dim: usize,
    pub prior: GaussianPrior,
    pub denoiser: MlpCheckpoint,
}

impl DiffusionCheckpoint {
    pub fn new(model: &DiffusionModel, seed: u64, training_meta: serde_json::Value) -> Self {
        Self {
            schedule: model.schedule.params(),
            shape: model.shape,
            embed_dim: model.embed_dim,
            prior: model.prior.clone(),
            denoiser: MlpCheckpoint::new(&model.denoiser, seed, training_meta),
        }
    }

    pub fn into_model(self) -> Result<DiffusionModel> {
        let schedule = NoiseSchedule::from_params(self.schedule)?;
        let denoiser = self.denoiser.into_model()?;
        DiffusionModel::new(schedule, denoiser, self.shape, self.embed_dim, self.prior)
            .map_err(|e| Error::Compatibility(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::param_count;

    fn tiny_model(seed: u64) -> DiffusionModel {
        let shape = Shape::new(8, 8, 1).unwrap();
        let denoiser = MlpModel::init(vec![64 + 8, 12, 64], &mut Rng::new(seed)).unwrap();
        DiffusionModel::new(NoiseSchedule::default(), denoiser, shape, 8, GaussianPrior::isotropic(64, 0.5, 0.04)).unwrap()
    }

    fn grid(seed: u64) -> ImageGrid {
        let shape = Shape::new(8, 8, 1).unwrap();
        let mut rng = Rng::new(seed);
        ImageGrid::from_vec(shape, (0..64).map(|_| rng.uniform()).collect(), true).unwrap()
    }

    #[test]
    fn forward_noise_at_zero_is_identity() {
        let m = tiny_model(1);
        let x = grid(2);
        assert_eq!(m.forward_noise(&x, 0, &mut Rng::new(3)).unwrap().data(), x.data());
    }

    #[test]
    fn timestep_range_checked() {
        let m = tiny_model(1);
        let x = grid(2);
        assert!(matches!(m.forward_noise(&x, 1001, &mut Rng::new(3)), Err(Error::Parameter(_))));
        assert!(matches!(m.reverse_step(&x, 0, &mut Rng::new(3)), Err(Error::Parameter(_))));
        assert!(matches!(m.purify(&x, 1001, &mut Rng::new(3)), Err(Error::Parameter(_))));
    }

    #[test]
    fn purify_at_zero_is_bit_exact_identity() {
        let m = tiny_model(1);
        let x = grid(4);
        assert_eq!(m.purify(&x, 0, &mut Rng::new(5)).unwrap(), x);
    }

    #[test]
    fn perfect_noise_prediction_recovers_true_posterior_mean() {
        let m = tiny_model(1);
        let s = m.schedule();
        let x0 = grid(6).into_vec();
        let eps = Rng::new(7).normal_vec(64, 1.0);
        for t in [1usize, 2, 17, 100, 200] {
            let x_t = noised(&x0, &eps, s, t);
            let mu = m.posterior_mean(&x_t, &eps, t);
            let abar_prev = s.alpha_bar(t - 1);
            let c0 = abar_prev.sqrt() * s.beta(t) / (1.0 - s.alpha_bar(t));
            let ct = s.alpha(t).sqrt() * (1.0 - abar_prev) / (1.0 - s.alpha_bar(t));
            for i in 0..64 {
                let expected = c0 * x0[i] + ct * x_t[i];
                assert!((mu[i] - expected).abs() < 1e-12, "t={t}");
            }
        }
    }

    #[test]
    fn last_step_adds_no_noise() {
        let m = tiny_model(1);
        let x = grid(8);
        let a = m.reverse_step(&x, 1, &mut Rng::new(1)).unwrap();
        let b = m.reverse_step(&x, 1, &mut Rng::new(2)).unwrap();
        assert_eq!(a, b);
        let c = m.reverse_step(&x, 2, &mut Rng::new(1)).unwrap();
        let d = m.reverse_step(&x, 2, &mut Rng::new(2)).unwrap();
        assert_ne!(c, d);
    }

    #[test]
    fn final_step_returns_clean_estimate() {
        // At t = 1, 1 - abar_1 = beta_1, so the posterior mean collapses to x0_hat.
        let m = tiny_model(3);
        let x = grid(9);
        let p = m.precond(1);
        let out = m.denoiser().forward(&m.net_input(x.data(), 1, &p)).unwrap();
        let x0 = m.x0_from_output(x.data(), &out, &p);
        let step = m.reverse_step(&x, 1, &mut Rng::new(0)).unwrap();
        for (a, b) in step.data().iter().zip(&x0) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn marginal_moments_match_schedule() {
        let m = tiny_model(1);
        let shape = Shape::new(8, 8, 1).unwrap();
        let x0 = ImageGrid::filled(shape, 0.7);
        let s = m.schedule();
        for t in [250usize, 500, 1000] {
            let mut rng = Rng::new(t as u64);
            let draws = 10_000 / 64 + 1;
            let vals: Vec<f64> = (0..draws)
                .flat_map(|_| m.forward_noise(&x0, t, &mut rng).unwrap().into_vec())
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let target_var = 1.0 - s.alpha_bar(t);
            let sigma_mc = (target_var / n).sqrt();
            assert!((mean - s.alpha_bar(t).sqrt() * 0.7).abs() <= 3.0 * sigma_mc, "t={t}");
            assert!((var / target_var - 1.0).abs() <= 0.05, "t={t}");
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = tiny_model(5);
        let text = serde_json::to_string(&DiffusionCheckpoint::new(&m, 5, serde_json::Value::Null)).unwrap();
        let back: DiffusionCheckpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_model().unwrap(), m);
        assert_eq!(param_count(m.denoiser().layer_sizes()), m.denoiser().params().len());
    }

    #[test]
    fn mismatched_denoiser_rejected() {
        let shape = Shape::new(8, 8, 1).unwrap();
        let denoiser = MlpModel::init(vec![64, 12, 64], &mut Rng::new(0)).unwrap();
        assert!(DiffusionModel::new(NoiseSchedule::default(), denoiser, shape, 8, GaussianPrior::isotropic(64, 0.5, 0.04)).is_err());
    }
}
