use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{attack_success_rate, pgd_attack, AttackConfig};
use crate::data::{generate, NUM_CLASSES};
use crate::diffusion::DiffusionModel;
use crate::error::{param_err, Result};
use crate::gaussianity::{analyze_residual, GaussianGate};
use crate::grid::{residual, ImageGrid};
use crate::models::MlpModel;
use crate::rng::{derive_seed, Rng};
use crate::robust_train::{condition_label_adv, noisy_copies};

/// Fewest images a t* sweep averages over.
pub const MIN_SWEEP_IMAGES: usize = 16;

/// Read-only inputs shared by every trial.
#[derive(Debug, Clone, Copy)]
pub struct EvalSetup<'a> {
    pub classifier: &'a MlpModel,
    pub ddpm: &'a DiffusionModel,
    pub harmful_class: usize,
    pub gaussian_sigma: f64,
    pub n_images: usize,
}

/// `n` benign evaluation images (and their labels) for a trial seed.
pub fn benign_eval_set(seed: u64, n: usize, harmful_class: usize) -> (Vec<ImageGrid>, Vec<usize>) {
    let data = generate(n * NUM_CLASSES / (NUM_CLASSES - 1) + NUM_CLASSES, derive_seed(seed, "evaluation"));
    data.images
        .into_iter()
        .zip(data.labels)
        .filter(|(_, l)| *l != harmful_class)
        .take(n)
        .unzip()
}

/// One row of a pipeline table. Residual columns are empty for the clean row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub trial: String,
    pub condition: String,
    pub epsilon: Option<f64>,
    pub t_star: Option<usize>,
    pub asr: f64,
    pub kurtosis: Option<f64>,
    pub qq_deviation: Option<f64>,
    pub gaussian_like: Option<bool>,
}

pub const PIPELINE_HEADER: &str = "trial,condition,epsilon,t_star,asr,kurtosis,qq_deviation,gaussian_like";

fn opt<T: std::fmt::Debug>(v: &Option<T>) -> String {
    v.as_ref().map(|x| format!("{x:?}")).unwrap_or_default()
}

pub fn pipeline_csv(rows: &[ConditionRow]) -> String {
    let mut out = format!("{PIPELINE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:?},{},{},{}",
            r.trial,
            r.condition,
            opt(&r.epsilon),
            opt(&r.t_star),
            r.asr,
            opt(&r.kurtosis),
            opt(&r.qq_deviation),
            opt(&r.gaussian_like)
        );
    }
    out
}

/// Residual statistics averaged over images, then gated.
#[derive(Debug, Clone, Copy, PartialEq)]
struct MeanStats {
    kurtosis: f64,
    qq_deviation: f64,
    gaussian_like: bool,
}

fn mean_residual_stats(processed: &[ImageGrid], clean: &[ImageGrid]) -> Result<MeanStats> {
    let stats = processed
        .par_iter()
        .zip(clean)
        .map(|(p, c)| analyze_residual(&residual(p, c)?))
        .collect::<Result<Vec<_>>>()?;
    let n = stats.len() as f64;
    let kurtosis = stats.iter().map(|s| s.avg_kurtosis).sum::<f64>() / n;
    let qq_deviation = stats.iter().map(|s| s.avg_qq_deviation).sum::<f64>() / n;
    Ok(MeanStats { kurtosis, qq_deviation, gaussian_like: GaussianGate::default().passes(kurtosis, qq_deviation) })
}

fn attack_all(model: &MlpModel, images: &[ImageGrid], cfg: &AttackConfig, rng: &Rng) -> Result<Vec<ImageGrid>> {
    let eps = (cfg.epsilon * 255.0).round() as i64;
    images
        .par_iter()
        .enumerate()
        .map(|(i, im)| pgd_attack(model, im, cfg, &mut rng.derive(&format!("attack/{eps}/{i}"))))
        .collect()
}

fn purify_all(dm: &DiffusionModel, images: &[ImageGrid], t_star: usize, rng: &Rng, tag: &str) -> Result<Vec<ImageGrid>> {
    images
        .par_iter()
        .enumerate()
        .map(|(i, im)| dm.purify(im, t_star, &mut rng.derive(&format!("purify/{tag}/{i}"))))
        .collect()
}

/// One trial: clean, clean + Gaussian noise, and for every attack the
/// adversarial and purified rows. The trial's images and noise streams all
/// derive from `label` under `root_seed`.
pub fn run_trial(
    setup: &EvalSetup<'_>,
    attacks: &[AttackConfig],
    t_star: usize,
    root_seed: u64,
    label: &str,
) -> Result<Vec<ConditionRow>> {
    if attacks.is_empty() {
        return param_err("a trial needs at least one attack");
    }
    let rng = Rng::new(root_seed).derive(label);
    let (clean, _) = benign_eval_set(rng.seed(), setup.n_images, setup.harmful_class);
    let asr = |imgs: &[ImageGrid]| attack_success_rate(setup.classifier, imgs, setup.harmful_class);
    let row = |condition: String, epsilon, t, asr, stats: Option<MeanStats>| ConditionRow {
        trial: label.to_string(),
        condition,
        epsilon,
        t_star: t,
        asr,
        kurtosis: stats.map(|s| s.kurtosis),
        qq_deviation: stats.map(|s| s.qq_deviation),
        gaussian_like: stats.map(|s| s.gaussian_like),
    };

    let mut rows = vec![row("clean".into(), None, None, asr(&clean)?, None)];
    let noisy = noisy_copies(&clean, setup.gaussian_sigma, &rng, "gaussian")?;
    let g_label = format!("gaussian-{}", (setup.gaussian_sigma * 255.0).round() as i64);
    rows.push(row(g_label, None, None, asr(&noisy)?, Some(mean_residual_stats(&noisy, &clean)?)));
    for cfg in attacks {
        let adv = attack_all(setup.classifier, &clean, cfg, &rng)?;
        let label = condition_label_adv(cfg.epsilon);
        rows.push(row(label.clone(), Some(cfg.epsilon), None, asr(&adv)?, Some(mean_residual_stats(&adv, &clean)?)));
        let tag = (cfg.epsilon * 255.0).round().to_string();
        let purified = purify_all(setup.ddpm, &adv, t_star, &rng, &tag)?;
        rows.push(row(
            format!("{label}+purify"),
            Some(cfg.epsilon),
            Some(t_star),
            asr(&purified)?,
            Some(mean_residual_stats(&purified, &clean)?),
        ));
    }
    Ok(rows)
}

/// Single trial labelled `trial-0`.
pub fn run_pipeline(setup: &EvalSetup<'_>, attacks: &[AttackConfig], t_star: usize, seed: u64) -> Result<Vec<ConditionRow>> {
    run_trial(setup, attacks, t_star, seed, "trial-0")
}

/// Runs `n_trials` trials (`trial-0`, `trial-1`, ...) on the worker pool or
/// one after another; rows come back sorted by trial label either way.
pub fn eval_asr(
    setup: &EvalSetup<'_>,
    attacks: &[AttackConfig],
    t_star: usize,
    seed: u64,
    n_trials: usize,
    sequential: bool,
) -> Result<Vec<ConditionRow>> {
    if n_trials == 0 {
        return param_err("eval-asr needs at least one trial");
    }
    let labels: Vec<String> = (0..n_trials).map(|k| format!("trial-{k}")).collect();
    let run = |label: &String| run_trial(setup, attacks, t_star, seed, label);
    let mut per_trial: Vec<(String, Vec<ConditionRow>)> = if sequential {
        labels.iter().map(|l| run(l).map(|r| (l.clone(), r))).collect::<Result<_>>()?
    } else {
        labels.par_iter().map(|l| run(l).map(|r| (l.clone(), r))).collect::<Result<_>>()?
    };
    per_trial.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(per_trial.into_iter().flat_map(|(_, r)| r).collect())
}

/// Mean and population std of ASR per condition across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrSummary {
    pub condition: String,
    pub epsilon: Option<f64>,
    pub t_star: Option<usize>,
    pub asr_mean: f64,
    pub asr_std: f64,
    pub n_trials: usize,
}

pub const ASR_SUMMARY_HEADER: &str = "condition,epsilon,t_star,asr_mean,asr_std,n_trials";

/// Groups by condition, keeping first-seen condition order.
pub fn aggregate_trials(rows: &[ConditionRow]) -> Vec<AsrSummary> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&ConditionRow>> = BTreeMap::new();
    for r in rows {
        if !groups.contains_key(r.condition.as_str()) {
            order.push(&r.condition);
        }
        groups.entry(&r.condition).or_default().push(r);
    }
    order
        .into_iter()
        .map(|c| {
            let g = &groups[c];
            let n = g.len() as f64;
            let mean = g.iter().map(|r| r.asr).sum::<f64>() / n;
            let var = g.iter().map(|r| (r.asr - mean).powi(2)).sum::<f64>() / n;
            AsrSummary {
                condition: c.to_string(),
                epsilon: g[0].epsilon,
                t_star: g[0].t_star,
                asr_mean: mean,
                asr_std: var.sqrt(),
                n_trials: g.len(),
            }
        })
        .collect()
}

pub fn asr_summary_csv(rows: &[AsrSummary]) -> String {
    let mut out = format!("{ASR_SUMMARY_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:?},{:?},{}",
            r.condition,
            opt(&r.epsilon),
            opt(&r.t_star),
            r.asr_mean,
            r.asr_std,
            r.n_trials
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub t_star: usize,
    pub kurtosis: f64,
    pub qq_deviation: f64,
    pub gaussian_like: bool,
    pub asr: f64,
}

pub const SWEEP_HEADER: &str = "epsilon,t_star,kurtosis,qq_deviation,gaussian_like,asr";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:?},{},{:?},{:?},{},{:?}",
            r.epsilon, r.t_star, r.kurtosis, r.qq_deviation, r.gaussian_like, r.asr
        );
    }
    out
}

/// One row per `(ε, t*)`. Each attack is run once and its adversarial
/// images are purified at every `t*`. `on_t_star` receives the seconds
/// spent purifying at each `t*`, summed over attacks.
pub fn sweep_tstar(
    setup: &EvalSetup<'_>,
    attacks: &[AttackConfig],
    t_stars: &[usize],
    seed: u64,
    mut on_t_star: impl FnMut(usize, f64),
) -> Result<Vec<SweepRow>> {
    if t_stars.is_empty() || attacks.is_empty() {
        return param_err("sweep needs at least one attack and one t*");
    }
    if setup.n_images < MIN_SWEEP_IMAGES {
        return param_err(format!("sweep averages over at least {MIN_SWEEP_IMAGES} images, got {}", setup.n_images));
    }
    let rng = Rng::new(seed).derive("sweep");
    let (clean, _) = benign_eval_set(rng.seed(), setup.n_images, setup.harmful_class);
    let mut timing: BTreeMap<usize, f64> = BTreeMap::new();
    let mut rows = Vec::new();
    for cfg in attacks {
        let adv = attack_all(setup.classifier, &clean, cfg, &rng)?;
        let eps_tag = (cfg.epsilon * 255.0).round();
        for &t in t_stars {
            let start = Instant::now();
            let purified = purify_all(setup.ddpm, &adv, t, &rng, &format!("{eps_tag}/{t}"))?;
            *timing.entry(t).or_insert(0.0) += start.elapsed().as_secs_f64();
            let s = mean_residual_stats(&purified, &clean)?;
            rows.push(SweepRow {
                epsilon: cfg.epsilon,
                t_star: t,
                kurtosis: s.kurtosis,
                qq_deviation: s.qq_deviation,
                gaussian_like: s.gaussian_like,
                asr: attack_success_rate(setup.classifier, &purified, setup.harmful_class)?,
            });
        }
    }
    for (t, secs) in timing {
        on_t_star(t, secs);
    }
    Ok(rows)
}
