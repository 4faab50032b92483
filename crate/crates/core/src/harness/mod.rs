//! Run configuration, output bookkeeping and the end-to-end experiments
//! behind the command-line tool.

mod pipeline;
mod record;
mod run;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackTarget};
use crate::data::HARMFUL_CLASS;
use crate::diffusion::{DdpmTrainConfig, DiffusionCheckpoint, DiffusionModel};
use crate::error::{Error, Result};
use crate::models::{MlpCheckpoint, MlpModel};
use crate::robust_train::{AugmentPolicy, ClassifierConfig};
use crate::verify::SuiteConfig;

pub use pipeline::{
    aggregate_trials, asr_summary_csv, benign_eval_set, eval_asr, pipeline_csv, run_pipeline, run_trial, sweep_csv, sweep_tstar,
    AsrSummary, ConditionRow, EvalSetup, SweepRow, ASR_SUMMARY_HEADER, MIN_SWEEP_IMAGES, PIPELINE_HEADER,
    SWEEP_HEADER,
};
pub use record::{sha256_hex, ExperimentRecord, ManifestEntry, RunDir, WallTime, CONFIG_FILE, RECORD_FILE};
pub use run::{execute, failed_reports, load_images, NOISY_VAL_SIGMA};

/// Purification depth used when none is given; the middle of the band in
/// which purified PGD residuals pass the Gaussian gate on the toy schedule.
pub const DEFAULT_T_STAR: usize = 40;

/// Name of the environment variable holding the root seed.
pub const SEED_ENV: &str = "PURIDIFF_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    TrainDdpm,
    TrainClassifier,
    Attack,
    Purify,
    Analyze,
    EvalAsr,
    VerifyConjectures,
    Pipeline,
    SweepTstar,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::TrainDdpm => "train-ddpm",
            ExperimentKind::TrainClassifier => "train-classifier",
            ExperimentKind::Attack => "attack",
            ExperimentKind::Purify => "purify",
            ExperimentKind::Analyze => "analyze",
            ExperimentKind::EvalAsr => "eval-asr",
            ExperimentKind::VerifyConjectures => "verify-conjectures",
            ExperimentKind::Pipeline => "pipeline",
            ExperimentKind::SweepTstar => "sweep-tstar",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunPaths {
    pub out_dir: PathBuf,
    pub ddpm: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
    /// Noise-augmented classifier, for the plain-vs-augmented report.
    pub augmented: Option<PathBuf>,
    /// Image file or directory of images.
    pub input: Option<PathBuf>,
    /// Clean reference image file or directory, matched to `input` by order.
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentParams {
    pub train_size: usize,
    pub val_size: usize,
    pub ddpm: DdpmTrainConfig,
    pub classifier: ClassifierConfig,
    pub augment: Option<AugmentPolicy>,
    pub epsilons: Vec<f64>,
    pub attack_steps: usize,
    pub attack_step_size: f64,
    pub harmful_class: usize,
    pub t_star: usize,
    pub t_stars: Vec<usize>,
    pub gaussian_sigma: f64,
    /// Benign images per trial.
    pub n_images: usize,
    pub eval_seeds: usize,
    /// Run trials one after another instead of on the worker pool.
    pub sequential: bool,
    pub histogram_bins: usize,
    pub suite: SuiteConfig,
    /// Store start/end wall-clock time in the record. Off by default so that
    /// replays are byte-identical.
    pub record_wall_time: bool,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            train_size: 2048,
            val_size: 512,
            ddpm: DdpmTrainConfig::default(),
            classifier: ClassifierConfig::default(),
            augment: None,
            epsilons: vec![16.0 / 255.0, 32.0 / 255.0, 64.0 / 255.0],
            attack_steps: 500,
            attack_step_size: 1.0 / 255.0,
            harmful_class: HARMFUL_CLASS,
            t_star: DEFAULT_T_STAR,
            t_stars: vec![0, 5, 10, 20, 30, 40, 50, 60, 80, 100, 150, 200, 300],
            gaussian_sigma: 30.0 / 255.0,
            n_images: 64,
            eval_seeds: 3,
            sequential: false,
            histogram_bins: 32,
            suite: SuiteConfig::default(),
            record_wall_time: false,
        }
    }
}

impl ExperimentParams {
    pub fn attack_configs(&self) -> Vec<AttackConfig> {
        self.epsilons
            .iter()
            .map(|&eps| AttackConfig {
                steps: self.attack_steps,
                step_size: self.attack_step_size.min(eps),
                ..AttackConfig::new(eps, AttackTarget::Class(self.harmful_class))
            })
            .collect()
    }
}

/// One run: what to do, the root seed, where files live and the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub paths: RunPaths,
    #[serde(default)]
    pub params: ExperimentParams,
}

impl RunConfig {
    pub fn new(kind: ExperimentKind, seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            kind,
            seed,
            paths: RunPaths { out_dir: out_dir.into(), ..Default::default() },
            params: ExperimentParams::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks that every referenced input path exists and that the inputs
    /// this kind of run needs are present.
    pub fn validate(&self) -> Result<()> {
        let p = &self.paths;
        for (name, path) in [
            ("ddpm", &p.ddpm),
            ("classifier", &p.classifier),
            ("augmented", &p.augmented),
            ("input", &p.input),
            ("reference", &p.reference),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(Error::Config(format!("{name} path {} does not exist", path.display())));
                }
            }
        }
        if p.out_dir.as_os_str().is_empty() {
            return Err(Error::Config("output directory is required".into()));
        }
        let need = |opt: &Option<PathBuf>, what: &str| -> Result<()> {
            if opt.is_none() {
                return Err(Error::Config(format!("{} needs a {what}", self.kind.name())));
            }
            Ok(())
        };
        use ExperimentKind::*;
        match self.kind {
            TrainDdpm | TrainClassifier => {}
            Attack | VerifyConjectures => need(&p.classifier, "classifier checkpoint")?,
            Purify => {
                need(&p.ddpm, "ddpm checkpoint")?;
                need(&p.input, "input image")?;
            }
            Analyze => {
                need(&p.input, "input image")?;
                need(&p.reference, "reference image")?;
            }
            EvalAsr | Pipeline | SweepTstar => {
                need(&p.ddpm, "ddpm checkpoint")?;
                need(&p.classifier, "classifier checkpoint")?;
            }
        }
        if self.params.epsilons.is_empty() || self.params.t_stars.is_empty() {
            return Err(Error::Config("epsilon and t* lists must be non-empty".into()));
        }
        for cfg in self.params.attack_configs() {
            cfg.validate()?;
        }
        Ok(())
    }
}

pub fn load_classifier(path: &Path) -> Result<MlpModel> {
    let ckpt: MlpCheckpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    ckpt.into_model()
}

pub fn load_ddpm(path: &Path) -> Result<DiffusionModel> {
    let ckpt: DiffusionCheckpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    ckpt.into_model()
}

/// Fails unless the classifier accepts the purifier's grids.
pub fn check_compatible(classifier: &MlpModel, ddpm: &DiffusionModel) -> Result<()> {
    if classifier.input_dim() != ddpm.shape().len() {
        return Err(Error::Compatibility(format!(
            "classifier takes {} inputs, diffusion model produces {} cells",
            classifier.input_dim(),
            ddpm.shape().len()
        )));
    }
    Ok(())
}

/// Parses `16/255`-style fractions as well as plain decimals.
pub fn parse_fraction(text: &str) -> Result<f64> {
    let bad = |e: String| Error::Parse(format!("`{text}`: {e}"));
    match text.split_once('/') {
        Some((num, den)) => {
            let n: f64 = num.trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
            let d: f64 = den.trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
            if d == 0.0 {
                return Err(bad("zero denominator".into()));
            }
            Ok(n / d)
        }
        None => text.trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string())),
    }
}
