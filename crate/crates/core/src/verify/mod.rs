//! Numerical checks of the noise-regularisation conjectures, plus the
//! embedding-space similarity sweep.
//!
//! Every check returns a [`ConjectureReport`]: one [`Measurement`] per
//! compared quantity, and a verdict that passes exactly when every
//! measurement holds.

mod conjectures;
mod embedding;
mod suite;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Result};
use crate::models::InputObjective;
use crate::rng::Rng;

pub use conjectures::{
    estimate_lipschitz_bound, gradient_expectation_deviation, quadratic_noise_increase, taylor_gap,
    verify_attack_degradation, verify_gradient_expectation, verify_taylor_regularizer, DegradationConfig,
};
pub use embedding::{cosine_similarity, embedding_similarity_sweep, similarity_csv, SimilarityRow, SIMILARITY_HEADER};
pub use suite::{run_suite, SuiteConfig};

/// Values at or below this are treated as exact zeros.
pub const EXACT_TOL: f64 = 1e-9;

/// Fewest Monte Carlo draws accepted by the statistical checks.
pub const MIN_MC_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

/// One compared pair. `holds` records whether `lhs` and `rhs` satisfy the
/// check's relation; `margin` is signed so that `margin >= 0` when it holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub setting: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
    /// Monte Carlo standard error of `lhs`, when it is an estimate.
    pub stderr: Option<f64>,
}

impl Measurement {
    /// `lhs <= rhs`
    pub fn at_most(setting: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        let margin = rhs - lhs;
        Self { setting: setting.into(), lhs, rhs, margin, holds: margin >= 0.0, stderr: None }
    }

    /// `lhs >= rhs`
    pub fn at_least(setting: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        let margin = lhs - rhs;
        Self { setting: setting.into(), lhs, rhs, margin, holds: margin >= 0.0, stderr: None }
    }

    /// `lhs < rhs`
    pub fn below(setting: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        let margin = rhs - lhs;
        Self { setting: setting.into(), lhs, rhs, margin, holds: margin > 0.0, stderr: None }
    }

    pub fn with_stderr(mut self, stderr: f64) -> Self {
        self.stderr = Some(stderr);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjectureReport {
    pub name: String,
    pub claim: String,
    pub measured: Vec<Measurement>,
    pub verdict: Verdict,
    pub seeds: Vec<u64>,
    /// Skipped sub-checks and other remarks.
    pub notes: Vec<String>,
}

impl ConjectureReport {
    pub fn new(name: &str, claim: &str, measured: Vec<Measurement>, seeds: Vec<u64>, notes: Vec<String>) -> Self {
        let verdict = if measured.iter().all(|m| m.holds) { Verdict::Pass } else { Verdict::Fail };
        Self { name: name.into(), claim: claim.into(), measured, verdict, seeds, notes }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

impl McEstimate {
    pub(crate) fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let estimate = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - estimate).powi(2)).sum::<f64>() / (n - 1.0);
        Self { estimate, stderr: (var / n).sqrt() }
    }
}

/// `E_η[L(x + η)]` for `η ~ N(0, σ² I)`, by plain Monte Carlo.
pub fn mc_expected_loss(
    obj: &dyn InputObjective,
    x: &[f64],
    sigma: f64,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<McEstimate> {
    check_mc_args(obj, x, sigma, n_samples)?;
    if sigma == 0.0 {
        return Ok(McEstimate { estimate: obj.value(x), stderr: 0.0 });
    }
    let mut xp = vec![0.0; x.len()];
    let samples: Vec<f64> = (0..n_samples)
        .map(|_| {
            xp.iter_mut().zip(x).for_each(|(p, v)| *p = v + sigma * rng.normal());
            obj.value(&xp)
        })
        .collect();
    Ok(McEstimate::from_samples(&samples))
}

fn check_mc_args(obj: &dyn InputObjective, x: &[f64], sigma: f64, n_samples: usize) -> Result<()> {
    if n_samples < MIN_MC_SAMPLES {
        return param_err(format!("need at least {MIN_MC_SAMPLES} Monte Carlo samples, got {n_samples}"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return param_err(format!("noise scale must be finite and non-negative, got {sigma}"));
    }
    if x.len() != obj.input_dim() {
        return dim_err(format!("point has {} values, objective expects {}", x.len(), obj.input_dim()));
    }
    Ok(())
}

/// Conjecture reports as a pretty-printed JSON array.
pub fn reports_json(reports: &[ConjectureReport]) -> String {
    serde_json::to_string_pretty(reports).expect("reports serialize")
}
