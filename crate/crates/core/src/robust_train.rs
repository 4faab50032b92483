//! Gaussian-noise-augmented training of the surrogate classifier and the
//! plain-vs-augmented comparison table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attacks::{attack_success_rate, pgd_attack, predict, AttackConfig};
use crate::diffusion::DiffusionModel;
use crate::error::{param_err, Result};
use crate::grid::{add_clamped, ImageGrid};
use crate::models::{LossSpec, MlpModel};
use crate::rng::{sample_gaussian, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub apply_prob: f64,
}

impl Default for AugmentPolicy {
    /// σ ~ U[0.01, 0.15], applied with probability 0.7.
    fn default() -> Self {
        Self { sigma_min: 0.01, sigma_max: 0.15, apply_prob: 0.7 }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min >= 0.0 && self.sigma_min <= self.sigma_max && self.sigma_max.is_finite()) {
            return param_err(format!("need 0 <= sigma_min <= sigma_max, got {self:?}"));
        }
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return param_err(format!("apply_prob must lie in [0,1], got {}", self.apply_prob));
        }
        Ok(())
    }
}

/// Augmented image and the σ that was applied, if any.
pub fn augment_traced(x: &ImageGrid, policy: &AugmentPolicy, rng: &mut Rng) -> Result<(ImageGrid, Option<f64>)> {
    policy.validate()?;
    if !x.pixel_domain() {
        return param_err("augment expects a pixel-domain grid");
    }
    if !rng.bernoulli(policy.apply_prob) {
        return Ok((x.clone(), None));
    }
    let sigma = rng.uniform_range(policy.sigma_min, policy.sigma_max);
    let noise = sample_gaussian(rng, x.shape(), sigma)?;
    Ok((add_clamped(x, &noise)?, Some(sigma)))
}

pub fn augment(x: &ImageGrid, policy: &AugmentPolicy, rng: &mut Rng) -> Result<ImageGrid> {
    augment_traced(x, policy, rng).map(|(g, _)| g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier on the default first-layer initialisation.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { hidden: vec![32], epochs: 40, batch_size: 16, learning_rate: 0.3, init_scale: 16.0, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub model: MlpModel,
    /// Mean cross-entropy on the un-augmented training set after each epoch.
    pub clean_losses: Vec<f64>,
    /// Mean cross-entropy on the inputs actually seen during each epoch.
    pub augmented_losses: Vec<f64>,
}

/// Plain minibatch SGD on cross-entropy; with a policy, every training image
/// is passed through [`augment`] each time it is drawn.
///
/// SGD runs on inputs shifted by the training-set pixel mean; the shift is
/// folded into the first-layer bias afterwards, so the returned model takes
/// raw pixels.
pub fn train_classifier(
    data: &[ImageGrid],
    labels: &[usize],
    policy: Option<&AugmentPolicy>,
    config: &ClassifierConfig,
) -> Result<TrainedClassifier> {
    if data.len() != labels.len() || data.is_empty() {
        return param_err("data and labels must be non-empty and of equal length");
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    if num_classes < 2 || (0..num_classes).any(|c| !labels.contains(&c)) {
        return param_err("labels must cover at least two classes with none missing");
    }
    if let Some(p) = policy {
        p.validate()?;
    }
    if config.batch_size == 0 {
        return param_err("batch size must be positive");
    }
    let root = Rng::new(config.seed);
    let mut sizes = vec![data[0].len()];
    sizes.extend_from_slice(&config.hidden);
    sizes.push(num_classes);
    let mut model = MlpModel::init(sizes, &mut root.derive("classifier-init"))?;
    if !(config.init_scale > 0.0 && config.init_scale.is_finite()) {
        return param_err("init scale must be positive");
    }
    let first = model.layer_sizes()[0] * model.layer_sizes()[1];
    model.params_mut()[..first].iter_mut().for_each(|w| *w *= config.init_scale);
    let specs: Vec<LossSpec> = labels.iter().map(|&l| LossSpec::cross_entropy(l)).collect();
    for x in data {
        model.forward(x.data())?;
    }
    let shift = data.iter().flat_map(|g| g.data()).sum::<f64>() / (data.len() * data[0].len()) as f64;
    let centered = |g: &ImageGrid| -> Vec<f64> { g.data().iter().map(|v| v - shift).collect() };

    let mut shuffle_rng = root.derive("classifier-shuffle");
    let mut aug_rng = root.derive("classifier-augment");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; model.params().len()];
    let (mut clean_losses, mut augmented_losses) = (Vec::new(), Vec::new());
    for _ in 0..config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut seen_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let input = match policy {
                    Some(p) => augment(&data[i], p, &mut aug_rng)?,
                    None => data[i].clone(),
                };
                seen_loss += model.accumulate_grad(&centered(&input), &specs[i], &mut grad, scale);
            }
            model.sgd_step(&grad, config.learning_rate);
        }
        augmented_losses.push(seen_loss / data.len() as f64);
        let clean = data.iter().zip(&specs).map(|(x, s)| s.value(&model.forward_unchecked(&centered(x)))).sum::<f64>();
        clean_losses.push(clean / data.len() as f64);
    }
    fold_input_shift(&mut model, shift);
    Ok(TrainedClassifier { model, clean_losses, augmented_losses })
}

/// Rewrites `f(x - shift)` as an equivalent model of `x`.
fn fold_input_shift(model: &mut MlpModel, shift: f64) {
    let (d_in, d_out) = (model.layer_sizes()[0], model.layer_sizes()[1]);
    let params = model.params_mut();
    for o in 0..d_out {
        let row_sum: f64 = params[o * d_in..(o + 1) * d_in].iter().sum();
        params[d_in * d_out + o] -= shift * row_sum;
    }
}

pub fn accuracy(model: &MlpModel, images: &[ImageGrid], labels: &[usize]) -> Result<f64> {
    if images.is_empty() || images.len() != labels.len() {
        return param_err("accuracy needs equal-length non-empty images and labels");
    }
    let mut correct = 0usize;
    for (im, &l) in images.iter().zip(labels) {
        correct += (predict(model, im)? == l) as usize;
    }
    Ok(correct as f64 / images.len() as f64)
}

/// Adds `N(0, σ²)` noise to every image and clamps; image `i` uses stream `label/i`.
pub fn noisy_copies(images: &[ImageGrid], sigma: f64, rng: &Rng, label: &str) -> Result<Vec<ImageGrid>> {
    images
        .iter()
        .enumerate()
        .map(|(i, im)| {
            let noise = sample_gaussian(&mut rng.derive(&format!("{label}/{i}")), im.shape(), sigma)?;
            add_clamped(im, &noise)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub input_condition: String,
    pub accuracy: f64,
    pub asr: f64,
    pub seed: u64,
}

pub const REPORT_HEADER: &str = "model,input_condition,accuracy,asr,seed";

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:?},{:?},{}", r.model, r.input_condition, r.accuracy, r.asr, r.seed);
    }
    out
}

/// Inputs and fixed settings for [`robustness_report`].
pub struct ReportSetup<'a> {
    /// Benign evaluation images (true class is not the harmful class).
    pub images: &'a [ImageGrid],
    pub labels: &'a [usize],
    pub harmful_class: usize,
    pub gaussian_sigma: f64,
    pub attacks: &'a [AttackConfig],
    pub purifier: &'a DiffusionModel,
    pub t_star: usize,
    pub seed: u64,
}

pub fn condition_label_adv(epsilon: f64) -> String {
    format!("adversarial-{}", (epsilon * 255.0).round() as i64)
}

/// Rows `{plain, augmented} × {clean, gaussian, adversarial(ε), adversarial(ε)+purify}`.
pub fn robustness_report(plain: &MlpModel, augmented: &MlpModel, setup: &ReportSetup<'_>) -> Result<Vec<ReportRow>> {
    let root = Rng::new(setup.seed);
    let noisy = noisy_copies(setup.images, setup.gaussian_sigma, &root, "report-gaussian")?;
    let mut rows = Vec::new();
    for (name, model) in [("plain", plain), ("augmented", augmented)] {
        let mut push = |cond: String, imgs: &[ImageGrid]| -> Result<()> {
            rows.push(ReportRow {
                model: name.to_string(),
                input_condition: cond,
                accuracy: accuracy(model, imgs, setup.labels)?,
                asr: attack_success_rate(model, imgs, setup.harmful_class)?,
                seed: setup.seed,
            });
            Ok(())
        };
        push("clean".into(), setup.images)?;
        push(format!("gaussian-{}", (setup.gaussian_sigma * 255.0).round() as i64), &noisy)?;
        for cfg in setup.attacks {
            let adv = setup
                .images
                .iter()
                .enumerate()
                .map(|(i, im)| pgd_attack(model, im, cfg, &mut root.derive(&format!("report-attack/{name}/{i}"))))
                .collect::<Result<Vec<_>>>()?;
            let purified = adv
                .iter()
                .enumerate()
                .map(|(i, im)| setup.purifier.purify(im, setup.t_star, &mut root.derive(&format!("report-purify/{name}/{i}"))))
                .collect::<Result<Vec<_>>>()?;
            let label = condition_label_adv(cfg.epsilon);
            push(label.clone(), &adv)?;
            push(format!("{label}+purify"), &purified)?;
        }
    }
    Ok(rows)
}
