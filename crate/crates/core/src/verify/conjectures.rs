use serde::{Deserialize, Serialize};

use super::{check_mc_args, mc_expected_loss, ConjectureReport, McEstimate, Measurement, EXACT_TOL, MIN_MC_SAMPLES};
use crate::attacks::attack_success_rate;
use crate::error::{dim_err, param_err, Result};
use crate::grid::ImageGrid;
use crate::models::{dot, hessian_input, norm, InputObjective, LossSpec, MlpModel, ModelLoss, Quadratic, SquareMatrix, HESSIAN_DIM_CAP};
use crate::robust_train::noisy_copies;
use crate::rng::Rng;

/// Required shrink factor when σ halves.
const HALVING_RATIO: f64 = 3.0;

/// Largest σ accepted by the Taylor check.
pub const TAYLOR_MAX_SIGMA: f64 = 0.05;

/// `HALVING_RATIO` generalised to an arbitrary σ ratio.
fn required_ratio(sigma_ratio: f64) -> f64 {
    sigma_ratio.powf(HALVING_RATIO.log2())
}

fn check_ladder(sigmas: &[f64], min_len: usize) -> Result<()> {
    if sigmas.len() < min_len {
        return param_err(format!("need at least {min_len} noise scales, got {}", sigmas.len()));
    }
    if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) || sigmas.windows(2).any(|w| w[0] >= w[1]) {
        return param_err(format!("noise scales must be finite, non-negative and strictly ascending: {sigmas:?}"));
    }
    Ok(())
}

fn standard_draws(d: usize, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| rng.normal_vec(d, 1.0)).collect()
}

fn offset(x: &[f64], z: &[f64], scale: f64) -> Vec<f64> {
    x.iter().zip(z).map(|(a, b)| a + scale * b).collect()
}

/// Residual `E[L(x + σz)] - L(x) - σ²/2 Tr(H)` estimated from antithetic
/// pairs with `½ σ² zᵀHz` as an exact control variate, so only terms of
/// fourth order and above contribute to the estimate.
fn taylor_gap_with(obj: &dyn InputObjective, x: &[f64], h: &SquareMatrix, sigma: f64, zs: &[Vec<f64>]) -> McEstimate {
    let base = obj.value(x);
    let samples: Vec<f64> = zs
        .iter()
        .map(|z| {
            let hz: Vec<f64> = h.data.chunks_exact(h.dim).map(|row| dot(row, z)).collect();
            let quad = 0.5 * sigma * sigma * dot(z, &hz);
            0.5 * (obj.value(&offset(x, z, sigma)) + obj.value(&offset(x, z, -sigma))) - base - quad
        })
        .collect();
    McEstimate::from_samples(&samples)
}

/// Gap between the Gaussian-smoothed loss and its second-order prediction
/// `L(x) + σ²/2 Tr(∇²L)`.
pub fn taylor_gap(obj: &dyn InputObjective, x: &[f64], sigma: f64, n_samples: usize, rng: &mut Rng) -> Result<McEstimate> {
    check_mc_args(obj, x, sigma, n_samples)?;
    let h = hessian_input(obj, x)?;
    Ok(taylor_gap_with(obj, x, &h, sigma, &standard_draws(x.len(), n_samples, rng)))
}

/// Checks that the smoothed loss matches its second-order expansion: per
/// point and σ, `|gap| <= C·σ⁴ + 3·stderr` with `C` fitted from the two
/// smallest σ, and the gap shrinks by at least 3× per halving of σ.
///
/// Odd Gaussian moments vanish, so the remainder of the expectation starts at
/// fourth order; a cubic envelope fitted at small σ is outgrown at larger σ.
pub fn verify_taylor_regularizer(
    obj: &dyn InputObjective,
    points: &[Vec<f64>],
    sigmas: &[f64],
    n_samples: usize,
    rng: &Rng,
) -> Result<ConjectureReport> {
    check_ladder(sigmas, 2)?;
    if sigmas[0] <= 0.0 || *sigmas.last().unwrap() > TAYLOR_MAX_SIGMA {
        return param_err(format!("noise scales must lie in (0, {TAYLOR_MAX_SIGMA}]"));
    }
    if points.is_empty() {
        return param_err("need at least one point");
    }
    if n_samples < MIN_MC_SAMPLES {
        return param_err(format!("need at least {MIN_MC_SAMPLES} Monte Carlo samples, got {n_samples}"));
    }
    let mut measured = Vec::new();
    for (i, x) in points.iter().enumerate() {
        if x.len() != obj.input_dim() {
            return dim_err(format!("point {i} has {} values, objective expects {}", x.len(), obj.input_dim()));
        }
        let h = hessian_input(obj, x)?;
        let zs = standard_draws(x.len(), n_samples, &mut rng.derive(&format!("taylor/{i}")));
        let gaps: Vec<McEstimate> = sigmas.iter().map(|&s| taylor_gap_with(obj, x, &h, s, &zs)).collect();
        let c = gaps[..2].iter().zip(sigmas).map(|(g, s)| g.estimate.abs() / s.powi(4)).fold(0.0, f64::max);
        for (g, s) in gaps.iter().zip(sigmas) {
            let bound = (c * s.powi(4) + 3.0 * g.stderr).max(EXACT_TOL);
            measured.push(Measurement::at_most(format!("point={i} sigma={s}"), g.estimate.abs(), bound).with_stderr(g.stderr));
        }
        for k in 0..sigmas.len() - 1 {
            let (small, large) = (gaps[k].estimate.abs(), gaps[k + 1].estimate.abs());
            if large <= EXACT_TOL {
                continue;
            }
            let ratio = if small == 0.0 { f64::INFINITY } else { large / small };
            measured.push(Measurement::at_least(
                format!("point={i} gap ratio sigma {}->{}", sigmas[k], sigmas[k + 1]),
                ratio,
                required_ratio(sigmas[k + 1] / sigmas[k]),
            ));
        }
    }
    Ok(ConjectureReport::new(
        "taylor-regularizer",
        "E[L(x+η)] = L(x) + σ²/2 Tr(∇²L) up to higher-order terms",
        measured,
        vec![rng.seed()],
        vec![],
    ))
}

/// `‖E_η[∇_θ L(x+η)] − ∇_θ L(x)‖` from antithetic pairs `±σz`.
fn gradient_deviation_with(model: &MlpModel, spec: &LossSpec, x: &[f64], sigma: f64, zs: &[Vec<f64>]) -> McEstimate {
    let p = model.params().len();
    if sigma == 0.0 {
        return McEstimate { estimate: 0.0, stderr: 0.0 };
    }
    let mut clean = vec![0.0; p];
    model.accumulate_grad(x, spec, &mut clean, 1.0);
    let mut sum = vec![0.0; p];
    let mut sum_sq = vec![0.0; p];
    let mut pair = vec![0.0; p];
    for z in zs {
        pair.iter_mut().for_each(|v| *v = 0.0);
        model.accumulate_grad(&offset(x, z, sigma), spec, &mut pair, 0.5);
        model.accumulate_grad(&offset(x, z, -sigma), spec, &mut pair, 0.5);
        for j in 0..p {
            let d = pair[j] - clean[j];
            sum[j] += d;
            sum_sq[j] += d * d;
        }
    }
    let n = zs.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let var_sum: f64 = (0..p).map(|j| ((sum_sq[j] / n - mean[j] * mean[j]) * n / (n - 1.0)).max(0.0)).sum();
    McEstimate { estimate: norm(&mean), stderr: (var_sum / n).sqrt() }
}

pub fn gradient_expectation_deviation(
    model: &MlpModel,
    spec: &LossSpec,
    x: &[f64],
    sigma: f64,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<McEstimate> {
    check_mc_args(&ModelLoss::new(model, spec)?, x, sigma, n_samples)?;
    Ok(gradient_deviation_with(model, spec, x, sigma, &standard_draws(x.len(), n_samples, rng)))
}

/// Checks that the noise-averaged parameter gradient approaches the clean
/// gradient at second order: `Δ(σ/2) <= Δ(σ)/3` along the σ ladder.
pub fn verify_gradient_expectation(
    model: &MlpModel,
    spec: &LossSpec,
    x: &[f64],
    sigmas: &[f64],
    n_samples: usize,
    rng: &Rng,
) -> Result<ConjectureReport> {
    check_ladder(sigmas, 2)?;
    let obj = ModelLoss::new(model, spec)?;
    check_mc_args(&obj, x, sigmas[0], n_samples)?;
    let zs = standard_draws(x.len(), n_samples, &mut rng.derive("gradient"));
    let deltas: Vec<McEstimate> = sigmas.iter().map(|&s| gradient_deviation_with(model, spec, x, s, &zs)).collect();
    let mut measured = Vec::new();
    for k in 0..sigmas.len() - 1 {
        let bound = deltas[k + 1].estimate / required_ratio(sigmas[k + 1] / sigmas[k]);
        measured.push(
            Measurement::at_most(
                format!("delta sigma={} vs sigma={}", sigmas[k], sigmas[k + 1]),
                deltas[k].estimate,
                bound.max(EXACT_TOL),
            )
            .with_stderr(deltas[k].stderr),
        );
    }
    let notes = sigmas.iter().zip(&deltas).map(|(s, d)| format!("sigma={s}: delta={:e} stderr={:e}", d.estimate, d.stderr)).collect();
    Ok(ConjectureReport::new(
        "gradient-expectation",
        "E_η[∇_θ L(x+η)] approaches ∇_θ L(x) as O(σ²)",
        measured,
        vec![rng.seed()],
        notes,
    ))
}

/// Exact noise-induced loss increase `σ²/2 Tr(A)` of a quadratic and the
/// curvature lower bound `σ² d λ_min / 2`.
pub fn quadratic_noise_increase(q: &Quadratic, sigma: f64) -> (f64, f64) {
    let d = q.input_dim();
    let lambda_min = SquareMatrix { dim: d, data: q.matrix().to_vec() }.min_eigenvalue();
    (0.5 * sigma * sigma * q.trace(), 0.5 * sigma * sigma * d as f64 * lambda_min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationConfig {
    pub harmful_class: usize,
    pub sigmas: Vec<f64>,
    pub n_samples: usize,
    /// Fraction of images whose expected loss must not drop.
    pub min_fraction: f64,
    /// Noise scale for the success-rate comparison.
    pub asr_sigma: f64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            harmful_class: crate::data::HARMFUL_CLASS,
            sigmas: vec![15.0 / 255.0, 30.0 / 255.0],
            n_samples: 200,
            min_fraction: 0.95,
            asr_sigma: 30.0 / 255.0,
        }
    }
}

/// Checks that Gaussian noise weakens a targeted attack: the expected target
/// loss does not decrease on at least `min_fraction` of the attacked images,
/// and the success rate does not rise. Whether it strictly drops is recorded
/// in the notes; a saturated attack can survive the noise unchanged.
///
/// A per-image increase counts when the Monte Carlo estimate is no more than
/// three standard errors below the noise-free loss.
pub fn verify_attack_degradation(
    model: &MlpModel,
    adv_images: &[ImageGrid],
    clean_images: &[ImageGrid],
    cfg: &DegradationConfig,
    rng: &Rng,
) -> Result<ConjectureReport> {
    if adv_images.is_empty() || adv_images.len() != clean_images.len() {
        return param_err("need equally many adversarial and clean images, at least one");
    }
    if !(0.0..=1.0).contains(&cfg.min_fraction) {
        return param_err("min_fraction must lie in [0,1]");
    }
    let spec = LossSpec::cross_entropy(cfg.harmful_class);
    let obj = ModelLoss::new(model, &spec)?;
    let d = obj.input_dim();
    let mut measured = Vec::new();
    let mut notes = Vec::new();
    for &sigma in &cfg.sigmas {
        let mut increased = 0usize;
        let mut skipped = 0usize;
        for (i, adv) in adv_images.iter().enumerate() {
            let x = adv.data();
            let base = obj.value(x);
            let est = mc_expected_loss(&obj, x, sigma, cfg.n_samples, &mut rng.derive(&format!("loss/{sigma}/{i}")))?;
            let rise = est.estimate - base;
            if rise >= -3.0 * est.stderr {
                increased += 1;
            }
            if d <= HESSIAN_DIM_CAP {
                let lambda_min = hessian_input(&obj, x)?.min_eigenvalue();
                if lambda_min > 0.0 {
                    let bound = 0.5 * sigma * sigma * d as f64 * lambda_min;
                    measured.push(
                        Measurement::at_least(format!("image={i} sigma={sigma} curvature bound"), rise + 3.0 * est.stderr, bound)
                            .with_stderr(est.stderr),
                    );
                } else {
                    skipped += 1;
                }
            }
        }
        let fraction = increased as f64 / adv_images.len() as f64;
        measured.push(Measurement::at_least(format!("fraction not decreased sigma={sigma}"), fraction, cfg.min_fraction));
        if d > HESSIAN_DIM_CAP {
            notes.push(format!("sigma={sigma}: curvature bound skipped, input dimension {d} exceeds the dense Hessian cap"));
        } else if skipped > 0 {
            notes.push(format!("sigma={sigma}: curvature bound skipped on {skipped} non-convex points"));
        }
    }
    let noisy = noisy_copies(adv_images, cfg.asr_sigma, rng, "asr-noise")?;
    let asr_adv = attack_success_rate(model, adv_images, cfg.harmful_class)?;
    let asr_noisy = attack_success_rate(model, &noisy, cfg.harmful_class)?;
    let asr_clean = attack_success_rate(model, clean_images, cfg.harmful_class)?;
    measured.push(Measurement::at_most(format!("asr noisy vs adversarial sigma={}", cfg.asr_sigma), asr_noisy, asr_adv));
    let drop = if asr_noisy < asr_adv { "strict drop" } else { "no strict drop" };
    notes.push(format!("asr clean={asr_clean} adversarial={asr_adv} adversarial+noise={asr_noisy} ({drop})"));
    Ok(ConjectureReport::new(
        "attack-degradation",
        "Gaussian noise raises the expected target loss of an adversarial input",
        measured,
        vec![rng.seed()],
        notes,
    ))
}

/// Checks `E|L(x+η) − L(x)| <= K_L·K_f·σ·√d`, where `K_f` is the largest
/// Frobenius norm of the input Jacobian and `K_L` the largest output-gradient
/// norm of the loss over `points`.
pub fn estimate_lipschitz_bound(
    model: &MlpModel,
    spec: &LossSpec,
    points: &[Vec<f64>],
    sigma: f64,
    n_draws: usize,
    rng: &Rng,
) -> Result<ConjectureReport> {
    if points.len() < 100 {
        return param_err(format!("need at least 100 points, got {}", points.len()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) || n_draws < 2 {
        return param_err("need a finite non-negative σ and at least two draws");
    }
    let obj = ModelLoss::new(model, spec)?;
    let d = obj.input_dim();
    let mut k_f = 0.0f64;
    let mut k_l = 0.0f64;
    for x in points {
        let jac = model.jacobian_input(x)?;
        k_f = k_f.max(jac.iter().map(|row| dot(row, row)).sum::<f64>().sqrt());
        let (_, g_out) = spec.value_and_grad(&model.forward(x)?);
        k_l = k_l.max(norm(&g_out));
    }
    let bound = k_l * k_f * sigma * (d as f64).sqrt();
    let mut measured = Vec::with_capacity(points.len());
    let mut noise_norm = 0.0;
    for (i, x) in points.iter().enumerate() {
        let mut r = rng.derive(&format!("heldout/{i}"));
        let base = obj.value(x);
        let samples: Vec<f64> = (0..n_draws)
            .map(|_| {
                let eta = r.normal_vec(d, sigma);
                noise_norm += norm(&eta);
                (obj.value(&offset(x, &eta, 1.0)) - base).abs()
            })
            .collect();
        let est = McEstimate::from_samples(&samples);
        measured.push(Measurement::at_most(format!("point={i}"), est.estimate, bound).with_stderr(est.stderr));
    }
    let mean_norm = noise_norm / (points.len() * n_draws) as f64;
    let notes = vec![format!(
        "K_f={k_f} K_L={k_l} sigma={sigma} d={d} mean noise norm={mean_norm} vs sigma*sqrt(d)={}",
        sigma * (d as f64).sqrt()
    )];
    Ok(ConjectureReport::new(
        "lipschitz-bound",
        "E|L(x+η) − L(x)| <= K_L·K_f·σ·√d",
        measured,
        vec![rng.seed()],
        notes,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::ln_gamma;

    fn spd(d: usize, seed: u64) -> Quadratic {
        let mut rng = Rng::new(seed);
        let b: Vec<f64> = rng.normal_vec(d * d, 1.0);
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = (0..d).map(|k| b[k * d + i] * b[k * d + j]).sum::<f64>() / d as f64;
            }
            a[i * d + i] += 0.1;
        }
        Quadratic::new(a, rng.normal_vec(d, 1.0), 0.3).unwrap()
    }

    fn points(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| rng.normal_vec(d, 0.5)).collect()
    }

    #[test]
    fn quadratic_taylor_identity_is_exact() {
        let q = spd(8, 1);
        let r = verify_taylor_regularizer(&q, &points(8, 3, 2), &[0.0125, 0.025, 0.05], 500, &Rng::new(3)).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.measured.iter().all(|m| m.lhs <= 1e-9));
    }

    #[test]
    fn constant_model_has_zero_gap() {
        let model = MlpModel::zeros(vec![5, 4, 2]).unwrap();
        let spec = LossSpec::cross_entropy(0);
        let obj = ModelLoss::new(&model, &spec).unwrap();
        let g = taylor_gap(&obj, &[0.1; 5], 0.05, 200, &mut Rng::new(1)).unwrap();
        assert_eq!(g.estimate, 0.0);
    }

    #[test]
    fn mlp_taylor_gap_shrinks_when_sigma_halves() {
        let model = MlpModel::init(vec![12, 10, 3], &mut Rng::new(4)).unwrap();
        let spec = LossSpec::cross_entropy(2);
        let obj = ModelLoss::new(&model, &spec).unwrap();
        let r = verify_taylor_regularizer(&obj, &points(12, 2, 5), &[0.025, 0.05], 2000, &Rng::new(6)).unwrap();
        assert!(r.passed(), "{r:#?}");
        assert!(r.measured.iter().any(|m| m.setting.contains("ratio")));
    }

    #[test]
    fn taylor_check_refuses_large_inputs_and_sigmas() {
        let q = Quadratic::half_norm(HESSIAN_DIM_CAP + 1);
        let p = vec![vec![0.0; HESSIAN_DIM_CAP + 1]];
        assert!(verify_taylor_regularizer(&q, &p, &[0.01, 0.02], 100, &Rng::new(0)).is_err());
        let q = Quadratic::half_norm(2);
        assert!(verify_taylor_regularizer(&q, &[vec![0.0; 2]], &[0.01, 0.1], 100, &Rng::new(0)).is_err());
        assert!(verify_taylor_regularizer(&q, &[vec![0.0; 2]], &[0.02, 0.01], 100, &Rng::new(0)).is_err());
    }

    #[test]
    fn linear_score_gradient_expectation_is_exact() {
        let model = MlpModel::init(vec![6, 2], &mut Rng::new(7)).unwrap();
        let spec = LossSpec::Score { weights: vec![0.7, -1.3] };
        let x = Rng::new(8).normal_vec(6, 1.0);
        for sigma in [0.0, 0.01, 0.1, 1.0] {
            let d = gradient_expectation_deviation(&model, &spec, &x, sigma, 200, &mut Rng::new(9)).unwrap();
            assert!(d.estimate <= 1e-12, "sigma={sigma}: {d:?}");
        }
    }

    #[test]
    fn linear_squared_loss_deviation_is_sigma_squared_weight_norm() {
        // E[(W(x+η) + b − y)(x+η)ᵀ] = (Wx + b − y)xᵀ + σ²W
        let model = MlpModel::init(vec![4, 1], &mut Rng::new(10)).unwrap();
        let spec = LossSpec::mse(vec![0.2]);
        let x = vec![0.1, -0.4, 0.3, 0.9];
        let sigma = 0.1;
        let d = gradient_expectation_deviation(&model, &spec, &x, sigma, 50_000, &mut Rng::new(11)).unwrap();
        let w_norm = norm(&model.params()[..4]);
        assert!((d.estimate - sigma * sigma * w_norm).abs() <= 4.0 * d.stderr + 1e-6, "{d:?} vs {}", sigma * sigma * w_norm);
    }

    #[test]
    fn mlp_gradient_deviation_decays_quadratically() {
        let model = MlpModel::init(vec![8, 10, 3], &mut Rng::new(12)).unwrap();
        let spec = LossSpec::cross_entropy(1);
        let x = Rng::new(13).normal_vec(8, 0.5);
        let r = verify_gradient_expectation(&model, &spec, &x, &[0.0, 0.01, 0.02], 2000, &Rng::new(14)).unwrap();
        assert!(r.passed(), "{r:#?}");
    }

    #[test]
    fn quadratic_increase_respects_curvature_bound() {
        let q = spd(6, 15);
        let (exact, bound) = quadratic_noise_increase(&q, 0.2);
        assert!(exact >= bound && bound > 0.0);
        let x = vec![0.2; 6];
        let est = mc_expected_loss(&q, &x, 0.2, 50_000, &mut Rng::new(16)).unwrap();
        assert!((est.estimate - q.value(&x) - exact).abs() <= 3.0 * est.stderr);
        // isotropic curvature makes the bound tight
        let (e, b) = quadratic_noise_increase(&Quadratic::half_norm(5), 0.3);
        assert!((e - b).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_constant_of_linear_model_is_weight_norm() {
        let model = MlpModel::init(vec![16, 1], &mut Rng::new(17)).unwrap();
        let spec = LossSpec::Score { weights: vec![1.0] };
        let r = estimate_lipschitz_bound(&model, &spec, &points(16, 100, 18), 0.05, 20, &Rng::new(19)).unwrap();
        assert!(r.passed());
        let w = norm(&model.params()[..16]);
        assert!(r.notes[0].contains(&format!("K_f={w}")), "{}", r.notes[0]);
        let zero = estimate_lipschitz_bound(&model, &spec, &points(16, 100, 18), 0.0, 20, &Rng::new(19)).unwrap();
        assert!(zero.measured.iter().all(|m| m.lhs == 0.0 && m.rhs == 0.0));
        assert!(estimate_lipschitz_bound(&model, &spec, &points(16, 99, 18), 0.05, 20, &Rng::new(19)).is_err());
    }

    #[test]
    fn gaussian_norm_mean_matches_chi_distribution() {
        let (d, n) = (256usize, 4000);
        let mut rng = Rng::new(20);
        let mc = (0..n).map(|_| norm(&rng.normal_vec(d, 1.0))).sum::<f64>() / n as f64;
        let chi_mean = 2f64.sqrt() * (ln_gamma((d as f64 + 1.0) / 2.0) - ln_gamma(d as f64 / 2.0)).exp();
        assert!((mc / chi_mean - 1.0).abs() < 0.01);
        assert!((chi_mean / 16.0 - 1.0).abs() < 0.01);
    }

    #[test]
    fn degradation_at_zero_sigma_is_trivial() {
        let model = MlpModel::init(vec![4, 6, 3], &mut Rng::new(21)).unwrap();
        let shape = crate::grid::Shape::new(2, 2, 1).unwrap();
        let imgs: Vec<ImageGrid> =
            (0..5).map(|i| ImageGrid::from_vec(shape, vec![0.1 * i as f64; 4], true).unwrap()).collect();
        let cfg = DegradationConfig { harmful_class: 2, sigmas: vec![0.0], n_samples: 100, ..Default::default() };
        let r = verify_attack_degradation(&model, &imgs, &imgs, &cfg, &Rng::new(22)).unwrap();
        let frac = r.measured.iter().find(|m| m.setting.starts_with("fraction")).unwrap();
        assert_eq!(frac.lhs, 1.0);
        assert!(verify_attack_degradation(&model, &imgs, &imgs[..2], &cfg, &Rng::new(22)).is_err());
    }
}
