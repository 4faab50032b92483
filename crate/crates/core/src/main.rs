use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use puridiff::harness::{execute, parse_fraction, ExperimentKind, RunConfig, SEED_ENV};
use puridiff::robust_train::AugmentPolicy;

/// Adversarial purification lab: train the toy DDPM and classifier, attack,
/// purify, and measure how Gaussian the residuals are.
#[derive(Parser, Debug)]
#[command(name = "puridiff", version)]
struct Cli {
    /// JSON run config; flags given here override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true, env = SEED_ENV)]
    seed: Option<u64>,
    /// Output directory; must not already hold a run record.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Store wall-clock timings in the record (makes records non-replayable).
    #[arg(long, global = true)]
    record_wall_time: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Default)]
struct Checkpoints {
    #[arg(long)]
    ddpm: Option<PathBuf>,
    #[arg(long)]
    classifier: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct Eval {
    /// Comma-separated attack budgets, e.g. `16/255,32/255`.
    #[arg(long, value_delimiter = ',', value_parser = fraction)]
    epsilons: Option<Vec<f64>>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    t_star: Option<usize>,
    #[arg(long)]
    n_images: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct Training {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    train_size: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Fit the diffusion purifier on generated toy images.
    TrainDdpm {
        #[command(flatten)]
        training: Training,
    },
    /// Train the surrogate classifier, optionally with Gaussian augmentation.
    TrainClassifier {
        #[command(flatten)]
        training: Training,
        /// Train with the default Gaussian noise augmentation policy.
        #[arg(long)]
        augment: bool,
    },
    /// PGD-attack input images (or a generated benign set).
    Attack {
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        eval: Eval,
    },
    /// Purify images with the diffusion model.
    Purify {
        #[arg(long)]
        ddpm: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        t_star: Option<usize>,
    },
    /// Residual Gaussianity of images against reference images.
    Analyze {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Attack success rates over several seeded trials.
    EvalAsr {
        #[command(flatten)]
        ckpt: Checkpoints,
        /// Noise-augmented classifier; adds the plain-vs-augmented report.
        #[arg(long)]
        augmented: Option<PathBuf>,
        #[command(flatten)]
        eval: Eval,
        #[arg(long)]
        eval_seeds: Option<usize>,
        /// Run trials one at a time instead of on the worker pool.
        #[arg(long)]
        sequential: bool,
    },
    /// Run the conjecture checks; exits non-zero if any fails.
    VerifyConjectures {
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// One trial: clean, Gaussian, adversarial and purified rows.
    Pipeline {
        #[command(flatten)]
        ckpt: Checkpoints,
        #[command(flatten)]
        eval: Eval,
    },
    /// Residual Gaussianity and ASR across purification depths.
    SweepTstar {
        #[command(flatten)]
        ckpt: Checkpoints,
        #[command(flatten)]
        eval: Eval,
        #[arg(long, value_delimiter = ',')]
        t_stars: Option<Vec<usize>>,
    },
}

fn fraction(s: &str) -> Result<f64, String> {
    parse_fraction(s).map_err(|e| e.to_string())
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, v: Option<PathBuf>) {
    if v.is_some() {
        *slot = v;
    }
}

fn apply_eval(cfg: &mut RunConfig, e: Eval) {
    let p = &mut cfg.params;
    set(&mut p.epsilons, e.epsilons);
    set(&mut p.attack_steps, e.steps);
    set(&mut p.t_star, e.t_star);
    set(&mut p.n_images, e.n_images);
}

fn apply_training(cfg: &mut RunConfig, t: Training, classifier: bool) {
    set(&mut cfg.params.train_size, t.train_size);
    if classifier {
        set(&mut cfg.params.classifier.epochs, t.epochs);
    } else {
        set(&mut cfg.params.ddpm.epochs, t.epochs);
    }
}

fn apply_ckpt(cfg: &mut RunConfig, c: Checkpoints) {
    set_path(&mut cfg.paths.ddpm, c.ddpm);
    set_path(&mut cfg.paths.classifier, c.classifier);
}

/// Defaults, then the JSON file, then flags (and the seed variable).
fn build_config(cli: Cli) -> Result<RunConfig> {
    let kind = match &cli.cmd {
        Cmd::TrainDdpm { .. } => ExperimentKind::TrainDdpm,
        Cmd::TrainClassifier { .. } => ExperimentKind::TrainClassifier,
        Cmd::Attack { .. } => ExperimentKind::Attack,
        Cmd::Purify { .. } => ExperimentKind::Purify,
        Cmd::Analyze { .. } => ExperimentKind::Analyze,
        Cmd::EvalAsr { .. } => ExperimentKind::EvalAsr,
        Cmd::VerifyConjectures { .. } => ExperimentKind::VerifyConjectures,
        Cmd::Pipeline { .. } => ExperimentKind::Pipeline,
        Cmd::SweepTstar { .. } => ExperimentKind::SweepTstar,
    };
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg = RunConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
            if cfg.kind != kind {
                bail!("config is for `{}`, not `{}`", cfg.kind.name(), kind.name());
            }
            cfg
        }
        None => RunConfig::new(kind, 0, PathBuf::new()),
    };
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.paths.out_dir, cli.out);
    cfg.params.record_wall_time |= cli.record_wall_time;

    match cli.cmd {
        Cmd::TrainDdpm { training } => apply_training(&mut cfg, training, false),
        Cmd::TrainClassifier { training, augment } => {
            apply_training(&mut cfg, training, true);
            if augment && cfg.params.augment.is_none() {
                cfg.params.augment = Some(AugmentPolicy::default());
            }
        }
        Cmd::Attack { classifier, input, eval } => {
            set_path(&mut cfg.paths.classifier, classifier);
            set_path(&mut cfg.paths.input, input);
            apply_eval(&mut cfg, eval);
        }
        Cmd::Purify { ddpm, input, t_star } => {
            set_path(&mut cfg.paths.ddpm, ddpm);
            set_path(&mut cfg.paths.input, input);
            set(&mut cfg.params.t_star, t_star);
        }
        Cmd::Analyze { input, reference, bins } => {
            set_path(&mut cfg.paths.input, input);
            set_path(&mut cfg.paths.reference, reference);
            set(&mut cfg.params.histogram_bins, bins);
        }
        Cmd::EvalAsr { ckpt, augmented, eval, eval_seeds, sequential } => {
            apply_ckpt(&mut cfg, ckpt);
            set_path(&mut cfg.paths.augmented, augmented);
            apply_eval(&mut cfg, eval);
            set(&mut cfg.params.eval_seeds, eval_seeds);
            cfg.params.sequential |= sequential;
        }
        Cmd::VerifyConjectures { classifier, samples } => {
            set_path(&mut cfg.paths.classifier, classifier);
            set(&mut cfg.params.suite.n_samples, samples);
        }
        Cmd::Pipeline { ckpt, eval } => {
            apply_ckpt(&mut cfg, ckpt);
            apply_eval(&mut cfg, eval);
        }
        Cmd::SweepTstar { ckpt, eval, t_stars } => {
            apply_ckpt(&mut cfg, ckpt);
            apply_eval(&mut cfg, eval);
            set(&mut cfg.params.t_stars, t_stars);
        }
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    let cfg = build_config(Cli::parse())?;
    let record = execute(&cfg).with_context(|| format!("{} failed", cfg.kind.name()))?;
    let out = cfg.paths.out_dir.display();
    println!("{} seed={} -> {out}/record.json", cfg.kind.name(), cfg.seed);
    for (name, value) in &record.metrics {
        println!("  {name} = {value}");
    }
    if record.metrics.get("failed_reports").is_some_and(|&n| n > 0.0) {
        bail!("{} conjecture report(s) failed; see {out}/conjectures.json", record.metrics["failed_reports"]);
    }
    Ok(())
}
