use serde::{Deserialize, Serialize};

use super::conjectures::{
    estimate_lipschitz_bound, gradient_expectation_deviation, verify_attack_degradation, verify_gradient_expectation,
    verify_taylor_regularizer, DegradationConfig,
};
use super::{ConjectureReport, Measurement};
use crate::attacks::{pgd_attack, AttackConfig, AttackTarget};
use crate::error::{param_err, Result};
use crate::grid::ImageGrid;
use crate::models::{LossSpec, MlpModel, ModelLoss, Quadratic};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Input dimension of the synthetic models used by the Taylor and
    /// gradient checks.
    pub toy_dim: usize,
    pub taylor_points: usize,
    pub taylor_sigmas: Vec<f64>,
    pub gradient_sigmas: Vec<f64>,
    pub n_samples: usize,
    pub attack_epsilon: f64,
    /// Attacked images used by the degradation check.
    pub attack_images: usize,
    pub degradation: DegradationConfig,
    pub lipschitz_points: usize,
    pub lipschitz_sigma: f64,
    pub lipschitz_draws: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            toy_dim: 16,
            taylor_points: 4,
            taylor_sigmas: vec![0.0125, 0.025, 0.05],
            gradient_sigmas: vec![0.0, 0.01, 0.02],
            n_samples: 2000,
            attack_epsilon: 32.0 / 255.0,
            attack_images: 64,
            degradation: DegradationConfig::default(),
            lipschitz_points: 100,
            lipschitz_sigma: 30.0 / 255.0,
            lipschitz_draws: 20,
        }
    }
}

fn renamed(mut r: ConjectureReport, name: &str) -> ConjectureReport {
    r.name = name.into();
    r
}

fn random_spd(d: usize, rng: &mut Rng) -> Result<Quadratic> {
    let b = rng.normal_vec(d * d, 1.0);
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = (0..d).map(|k| b[k * d + i] * b[k * d + j]).sum::<f64>() / d as f64;
        }
        a[i * d + i] += 0.1;
    }
    Quadratic::new(a, rng.normal_vec(d, 1.0), rng.normal())
}

/// Runs every conjecture check. Synthetic quadratic, linear and MLP models
/// cover the exact and small-dimension cases; the trained classifier and
/// `benign` images cover the attack and Lipschitz checks.
pub fn run_suite(classifier: &MlpModel, benign: &[ImageGrid], cfg: &SuiteConfig) -> Result<Vec<ConjectureReport>> {
    let needed = cfg.attack_images.max(cfg.lipschitz_points);
    if benign.len() < needed {
        return param_err(format!("suite needs {needed} benign images, got {}", benign.len()));
    }
    let root = Rng::new(cfg.seed);
    let d = cfg.toy_dim;
    let mut point_rng = root.derive("points");
    let points: Vec<Vec<f64>> = (0..cfg.taylor_points).map(|_| point_rng.normal_vec(d, 0.5)).collect();
    let mut reports = Vec::new();

    let quad = random_spd(d, &mut root.derive("quadratic"))?;
    let r = verify_taylor_regularizer(&quad, &points, &cfg.taylor_sigmas, cfg.n_samples, &root.derive("taylor-quadratic"))?;
    reports.push(renamed(r, "taylor-regularizer/quadratic"));

    let mlp = MlpModel::init(vec![d, 12, 4], &mut root.derive("toy-mlp"))?;
    let ce = LossSpec::cross_entropy(1);
    let obj = ModelLoss::new(&mlp, &ce)?;
    let r = verify_taylor_regularizer(&obj, &points, &cfg.taylor_sigmas, cfg.n_samples, &root.derive("taylor-mlp"))?;
    reports.push(renamed(r, "taylor-regularizer/mlp"));

    // Score loss on an affine model: the parameter gradient is affine in x,
    // so its noise average equals the clean gradient exactly.
    let linear = MlpModel::init(vec![d, 1], &mut root.derive("toy-linear"))?;
    let score = LossSpec::Score { weights: vec![1.0] };
    let grad_rng = root.derive("gradient-linear");
    let r = verify_gradient_expectation(&linear, &score, &points[0], &cfg.gradient_sigmas, cfg.n_samples, &grad_rng)?;
    let mut measured = r.measured;
    for &s in &cfg.gradient_sigmas {
        let dev = gradient_expectation_deviation(&linear, &score, &points[0], s, cfg.n_samples, &mut grad_rng.derive("exact"))?;
        measured.push(Measurement::at_most(format!("linear delta sigma={s}"), dev.estimate, 1e-12).with_stderr(dev.stderr));
    }
    reports.push(ConjectureReport::new("gradient-expectation/linear", &r.claim, measured, r.seeds, r.notes));

    let r = verify_gradient_expectation(&mlp, &ce, &points[0], &cfg.gradient_sigmas, cfg.n_samples, &root.derive("gradient-mlp"))?;
    reports.push(renamed(r, "gradient-expectation/mlp"));

    let attack = AttackConfig::new(cfg.attack_epsilon, AttackTarget::Class(cfg.degradation.harmful_class));
    let attack_rng = root.derive("attack");
    let clean = &benign[..cfg.attack_images];
    let adv: Vec<ImageGrid> = clean
        .iter()
        .enumerate()
        .map(|(i, x)| pgd_attack(classifier, x, &attack, &mut attack_rng.derive(&i.to_string())))
        .collect::<Result<_>>()?;
    reports.push(verify_attack_degradation(classifier, &adv, clean, &cfg.degradation, &root.derive("degradation"))?);

    let lip_points: Vec<Vec<f64>> = benign[..cfg.lipschitz_points].iter().map(|g| g.data().to_vec()).collect();
    let target = LossSpec::cross_entropy(cfg.degradation.harmful_class);
    reports.push(estimate_lipschitz_bound(
        classifier,
        &target,
        &lip_points,
        cfg.lipschitz_sigma,
        cfg.lipschitz_draws,
        &root.derive("lipschitz"),
    )?);
    Ok(reports)
}
