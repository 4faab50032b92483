//! Targeted L∞ projected gradient descent against a surrogate model.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::grid::ImageGrid;
use crate::models::{argmax, LossSpec, MlpModel};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackTarget {
    Class(usize),
    Output(Vec<f64>),
}

impl AttackTarget {
    pub fn loss_spec(&self) -> LossSpec {
        match self {
            AttackTarget::Class(c) => LossSpec::cross_entropy(*c),
            AttackTarget::Output(v) => LossSpec::mse(v.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub target: AttackTarget,
    pub random_start: bool,
}

impl AttackConfig {
    /// 500 steps of size 1/255 without random start.
    pub fn new(epsilon: f64, target: AttackTarget) -> Self {
        Self { epsilon, steps: 500, step_size: 1.0 / 255.0, target, random_start: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return param_err(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if !(self.step_size > 0.0) {
            return param_err("step size must be positive");
        }
        if self.step_size > self.epsilon {
            return param_err(format!("step size {} exceeds epsilon {}", self.step_size, self.epsilon));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub image: ImageGrid,
    /// Target loss before the first step and after every step.
    pub loss_trajectory: Vec<f64>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Returns `x0 + δ` with `‖δ‖∞ ≤ ε`, clamped to `[0,1]` after every step.
pub fn pgd_attack(model: &MlpModel, x0: &ImageGrid, cfg: &AttackConfig, rng: &mut Rng) -> Result<ImageGrid> {
    pgd_attack_traced(model, x0, cfg, rng).map(|o| o.image)
}

pub fn pgd_attack_traced(model: &MlpModel, x0: &ImageGrid, cfg: &AttackConfig, rng: &mut Rng) -> Result<AttackOutcome> {
    cfg.validate()?;
    if !x0.pixel_domain() {
        return param_err("attack input must be a pixel-domain grid");
    }
    let spec = cfg.target.loss_spec();
    let base = x0.data();
    // loss/dimension checks up front
    model.loss(base, &spec)?;

    let eps = cfg.epsilon;
    let mut x: Vec<f64> = if cfg.random_start {
        base.iter().map(|v| (v + rng.uniform_range(-eps, eps)).clamp(0.0, 1.0)).collect()
    } else {
        base.to_vec()
    };
    let mut trajectory = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let (loss, g) = model.loss_and_grad_input_unchecked(&x, &spec);
        trajectory.push(loss);
        for ((xi, &b), gi) in x.iter_mut().zip(base).zip(&g) {
            let delta = (*xi - b - cfg.step_size * sign(*gi)).clamp(-eps, eps);
            *xi = (b + delta).clamp(0.0, 1.0);
        }
    }
    trajectory.push(spec.value(&model.forward_unchecked(&x)));
    Ok(AttackOutcome { image: ImageGrid::from_raw(x0.shape(), x, true), loss_trajectory: trajectory })
}

pub fn predict(model: &MlpModel, image: &ImageGrid) -> Result<usize> {
    Ok(argmax(&model.forward(image.data())?))
}

/// Fraction of `images` the model assigns to `harmful_class`.
pub fn attack_success_rate(model: &MlpModel, images: &[ImageGrid], harmful_class: usize) -> Result<f64> {
    if images.is_empty() {
        return param_err("attack success rate needs at least one image");
    }
    let mut hits = 0usize;
    for im in images {
        hits += (predict(model, im)? == harmful_class) as usize;
    }
    Ok(hits as f64 / images.len() as f64)
}
