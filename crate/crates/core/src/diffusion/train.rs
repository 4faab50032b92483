use serde::{Deserialize, Serialize};

use super::model::{noised, DiffusionModel, Precond};
use super::prior::GaussianPrior;
use super::schedule::{NoiseSchedule, ScheduleParams};
use crate::error::{dim_err, param_err, Result};
use crate::grid::ImageGrid;
use crate::models::MlpModel;
use crate::optim::Optimizer;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpmTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub schedule: ScheduleParams,
    /// Principal components kept by the Gaussian prior.
    pub prior_rank: usize,
    pub seed: u64,
}

impl Default for DdpmTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            optimizer: Optimizer::adam(1e-3),
            hidden: vec![32],
            embed_dim: 16,
            schedule: ScheduleParams::default(),
            prior_rank: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedDdpm {
    pub model: DiffusionModel,
    /// Mean per-cell noise-prediction MSE for each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainedDdpm {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().unwrap_or(&f64::NAN)
    }
}

/// Minimum training-set size accepted by [`train_ddpm`].
pub const MIN_TRAINING_GRIDS: usize = 256;

/// Fits the Gaussian prior, then the correction network on
/// `MSE(eps_hat, eps)` over random `(x0, t, eps)`.
///
/// The output layer starts at zero, so training starts from the linear
/// denoiser.
pub fn train_ddpm(data: &[ImageGrid], config: &DdpmTrainConfig) -> Result<TrainedDdpm> {
    if data.len() < MIN_TRAINING_GRIDS {
        return param_err(format!("need at least {MIN_TRAINING_GRIDS} training grids, got {}", data.len()));
    }
    let shape = data[0].shape();
    if let Some(bad) = data.iter().position(|g| g.shape() != shape) {
        return dim_err(format!("grid {bad} has shape {}, expected {shape}", data[bad].shape()));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return param_err("epochs and batch size must be positive");
    }

    let prior = GaussianPrior::fit(data, config.prior_rank)?;
    let root = Rng::new(config.seed);
    let schedule = NoiseSchedule::from_params(config.schedule)?;
    let mut sizes = vec![shape.len() + config.embed_dim];
    sizes.extend_from_slice(&config.hidden);
    sizes.push(shape.len());
    let mut denoiser = MlpModel::init(sizes, &mut root.derive("ddpm-init"))?;
    denoiser.zero_output_layer();
    let mut model = DiffusionModel::new(schedule, denoiser, shape, config.embed_dim, prior)?;

    let n_params = model.denoiser().params().len();
    let mut opt_state = config.optimizer.state(n_params);
    let mut rng = root.derive("ddpm-train");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; n_params];
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let timesteps = model.schedule().timesteps();

    for _epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let t = 1 + rng.below(timesteps);
                let eps = rng.normal_vec(shape.len(), 1.0);
                let x_t = noised(data[idx].data(), &eps, model.schedule(), t);
                let p = model.precond(t);
                let input = model.net_input(&x_t, t, &p);
                let loss_fn = |out: &[f64]| eps_loss(&model, &x_t, &eps, out, &p);
                epoch_loss += model.denoiser().accumulate_with(&input, loss_fn, &mut grad, scale);
            }
            config.optimizer.apply(model.denoiser_mut().params_mut(), &grad, &mut opt_state);
        }
        epoch_losses.push(epoch_loss / data.len() as f64);
    }
    Ok(TrainedDdpm { model, epoch_losses })
}

/// Per-cell noise MSE and its gradient with respect to the network output.
fn eps_loss(model: &DiffusionModel, x_t: &[f64], eps: &[f64], out: &[f64], p: &Precond) -> (f64, Vec<f64>) {
    let cells = eps.len() as f64;
    let k = p.eps_per_output();
    let eps_hat = DiffusionModel::eps_from_x0(x_t, &model.x0_from_output(x_t, out, p), p);
    let diff: Vec<f64> = eps_hat.iter().zip(eps).map(|(a, b)| a - b).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / cells;
    (loss, diff.iter().map(|d| 2.0 * d * k / cells).collect())
}
