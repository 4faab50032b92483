use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::pipeline::{
    aggregate_trials, asr_summary_csv, benign_eval_set, eval_asr, pipeline_csv, run_pipeline, sweep_csv, sweep_tstar,
    ConditionRow, EvalSetup,
};
use super::record::{ExperimentRecord, RunDir};
use super::{check_compatible, load_classifier, load_ddpm, ExperimentKind, RunConfig};
use crate::attacks::{attack_success_rate, pgd_attack_traced};
use crate::data::generate;
use crate::diffusion::{train_ddpm, DiffusionCheckpoint};
use crate::error::{Error, Result};
use crate::gaussianity::{analyze_residual, export_plot_data};
use crate::grid::{residual, ImageGrid};
use crate::io::read_grid;
use crate::models::MlpCheckpoint;
use crate::rng::{derive_seed, Rng};
use crate::robust_train::{
    accuracy, condition_label_adv, noisy_copies, report_csv, robustness_report, train_classifier, ReportSetup,
};
use crate::verify::{run_suite, ConjectureReport};

/// Noise level of the noisy-validation accuracy reported after classifier
/// training.
pub const NOISY_VAL_SIGMA: f64 = 0.1;

/// Validates `cfg`, runs it and writes the record into `cfg.paths.out_dir`.
pub fn execute(cfg: &RunConfig) -> Result<ExperimentRecord> {
    cfg.validate()?;
    let mut run = RunDir::create(&cfg.paths.out_dir, cfg.params.record_wall_time)?;
    run.metric("seed", cfg.seed as f64);
    use ExperimentKind::*;
    match cfg.kind {
        TrainDdpm => train_ddpm_run(cfg, &mut run)?,
        TrainClassifier => train_classifier_run(cfg, &mut run)?,
        Attack => attack_run(cfg, &mut run)?,
        Purify => purify_run(cfg, &mut run)?,
        Analyze => analyze_run(cfg, &mut run)?,
        EvalAsr => eval_asr_run(cfg, &mut run)?,
        VerifyConjectures => verify_run(cfg, &mut run)?,
        Pipeline => pipeline_run(cfg, &mut run)?,
        SweepTstar => sweep_run(cfg, &mut run)?,
    }
    run.finish(cfg)
}

/// Image files of `path`: the file itself, or the `.ppm`/`.pgm`/`.csv`
/// entries of a directory in name order. Returns `(stem, grid)` pairs.
pub fn load_images(path: &Path) -> Result<Vec<(String, ImageGrid)>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        v.retain(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("ppm" | "pgm" | "csv")));
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Error::Config(format!("no images under {}", path.display())));
    }
    files
        .iter()
        .map(|f| {
            let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
            Ok((stem, read_grid(f)?))
        })
        .collect()
}

fn seeded_train_data(cfg: &RunConfig) -> (crate::data::Dataset, crate::data::Dataset) {
    let p = &cfg.params;
    (
        generate(p.train_size, derive_seed(cfg.seed, "train-data")),
        generate(p.val_size, derive_seed(cfg.seed, "validation")),
    )
}

fn train_ddpm_run(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    let (train, _) = seeded_train_data(cfg);
    let mut tc = cfg.params.ddpm.clone();
    tc.seed = derive_seed(cfg.seed, "ddpm");
    let trained = run.timed("train", || train_ddpm(&train.images, &tc))?;
    let meta = json!({ "train_size": train.len(), "epoch_losses": trained.epoch_losses });
    run.write_json("ddpm.json", &DiffusionCheckpoint::new(&trained.model, tc.seed, meta))?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in trained.epoch_losses.iter().enumerate() {
        let _ = writeln!(csv, "{},{l:?}", i + 1);
    }
    run.write("losses.csv", csv.as_bytes())?;
    let mut rng = Rng::new(derive_seed(cfg.seed, "samples"));
    for i in 0..4 {
        run.write_grid(&format!("samples/sample{i}"), &trained.model.sample(&mut rng).clamped())?;
    }
    run.metric("final_loss", trained.final_loss());
    Ok(())
}

fn train_classifier_run(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    let (train, val) = seeded_train_data(cfg);
    let mut cc = cfg.params.classifier.clone();
    cc.seed = derive_seed(cfg.seed, "classifier");
    let policy = cfg.params.augment;
    let trained = run.timed("train", || train_classifier(&train.images, &train.labels, policy.as_ref(), &cc))?;
    let meta = json!({ "train_size": train.len(), "augment": policy });
    run.write_json("classifier.json", &MlpCheckpoint::new(&trained.model, cc.seed, meta))?;
    let mut csv = String::from("epoch,clean_loss,augmented_loss\n");
    for (i, (c, a)) in trained.clean_losses.iter().zip(&trained.augmented_losses).enumerate() {
        let _ = writeln!(csv, "{},{c:?},{a:?}", i + 1);
    }
    run.write("losses.csv", csv.as_bytes())?;
    let noisy = noisy_copies(&val.images, NOISY_VAL_SIGMA, &Rng::new(cfg.seed), "noisy-validation")?;
    run.metric("val_accuracy_clean", accuracy(&trained.model, &val.images, &val.labels)?);
    run.metric("val_accuracy_noisy", accuracy(&trained.model, &noisy, &val.labels)?);
    Ok(())
}

/// Input images, or a generated benign set when no input is given.
fn inputs_or_generated(cfg: &RunConfig) -> Result<Vec<(String, ImageGrid)>> {
    match &cfg.paths.input {
        Some(p) => load_images(p),
        None => {
            let (imgs, _) = benign_eval_set(cfg.seed, cfg.params.n_images, cfg.params.harmful_class);
            Ok(imgs.into_iter().enumerate().map(|(i, g)| (format!("img{i:03}"), g)).collect())
        }
    }
}

fn attack_run(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    let model = load_classifier(cfg.paths.classifier.as_ref().expect("validated"))?;
    let images = inputs_or_generated(cfg)?;
    let rng = Rng::new(cfg.seed).derive("attack");
    let mut traj = String::from("epsilon,image,step,loss\n");
    let mut entries = Vec::new();
    for (stem, img) in &images {
        run.write_grid(&format!("clean/{stem}"), img)?;
    }
    for attack in cfg.params.attack_configs() {
        let tag = condition_label_adv(attack.epsilon);
        let mut adv = Vec::with_capacity(images.len());
        for (i, (stem, img)) in images.iter().enumerate() {
            let out = pgd_attack_traced(&model, img, &attack, &mut rng.derive(&format!("{tag}/{i}")))?;
            for (step, loss) in out.loss_trajectory.iter().enumerate() {
                let _ = writeln!(traj, "{:?},{stem},{step},{loss:?}", attack.epsilon);
            }
            let path = format!("{tag}/{stem}");
            run.write_grid(&path, &out.image)?;
            entries.push(json!({
                "epsilon": attack.epsilon,
                "image": stem,
                "final_loss": out.loss_trajectory.last(),
                "max_abs_perturbation": residual(&out.image, img)?.max_abs(),
            }));
            adv.push(out.image);
        }
        run.metric(format!("asr/{tag}"), attack_success_rate(&model, &adv, cfg.params.harmful_class)?);
    }
    run.write("loss_trajectories.csv", traj.as_bytes())?;
    run.write_json("attacks.json", &json!({ "attacks": cfg.params.attack_configs(), "images": entries }))?;
    Ok(())
}

fn purify_run(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    let dm = load_ddpm(cfg.paths.ddpm.as_ref().expect("validated"))?;
    let images = load_images(cfg.paths.input.as_ref().expect("validated"))?;
    let t_star = cfg.params.t_star;
    let rng = Rng::new(cfg.seed).derive("purify");
    for (i, (stem, img)) in images.iter().enumerate() {
        let out = run.timed(&format!("purify/t*={t_star}"), || dm.purify(img, t_star, &mut rng.derive(&i.to_string())))?;
        run.write_grid(&format!("purified/{stem}"), &out)?;
    }
    run.metric("t_star", t_star as f64);
    run.metric("images", images.len() as f64);
    Ok(())
}

fn analyze_run(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    let inputs = load_images(cfg.paths.input.as_ref().expect("validated"))?;
    let refs = load_images(cfg.paths.reference.as_ref().expect("validated"))?;
    if inputs.len() != refs.len() {
        return Err(Error::Config(format!("{} inputs but {} reference images", inputs.len(), refs.len())));
    }
    let mut analyses = Vec::new();
    let (mut k_sum, mut d_sum) = (0.0, 0.0);
    for ((stem, x), (_, reference)) in inputs.iter().zip(&refs) {
        let r = residual(x, reference)?;
        let stats = analyze_residual(&r)?;
        let plots = export_plot_data(&r, cfg.params.histogram_bins)?;
        run.write_grid(&format!("residuals/{stem}"), &r)?;
        run.write(&format!("hist/{stem}.csv"), plots.histogram_csv().as_bytes())?;
        run.write(&format!("qq/{stem}.csv"), plots.qq_csv().as_bytes())?;
        k_sum += stats.avg_kurtosis;
        d_sum += stats.avg_qq_deviation;
        analyses.push(json!({ "image": stem, "stats": stats }));
    }
    run.write_json("analysis.json", &analyses)?;
    let n = inputs.len() as f64;
    run.metric("mean_kurtosis", k_sum / n);
    run.metric("mean_qq_deviation", d_sum / n);
    Ok(())
}

struct Loaded {
    classifier: crate::models::MlpModel,
    ddpm: crate::diffusion::DiffusionModel,
}

fn load_pair(cfg: &RunConfig) -> Result<Loaded> {
    let classifier = load_classifier(cfg.paths.classifier.as_ref().expect("validated"))?;
    let ddpm = load_ddpm(cfg.paths.ddpm.as_ref().expect("validated"))?;
    check_compatible(&classifier, &ddpm)?;
    Ok(Loaded { classifier, ddpm })
}

fn setup<'a>(cfg: &RunConfig, l: &'a Loaded) -> EvalSetup<'a> {
    EvalSetup {
        classifier: &l.classifier,
        ddpm: &l.ddpm,
        harmful_class: cfg.params.harmful_class,
        gaussian_sigma: cfg.params.gaussian_sigma,
        n_images: cfg.params.n_images,
    }
}

fn table_metrics(run: &mut RunDir, rows: &[ConditionRow]) {
    for s in aggregate_trials(rows) {
        run.metric(format!("asr/{}", s.condition), s.asr_mean);
    }
}

fn pipeline_run(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    let l = load_pair(cfg)?;
    let rows = run.timed("pipeline", || run_pipeline(&setup(cfg, &l), &cfg.params.attack_configs(), cfg.params.t_star, cfg.seed))?;
    run.write("pipeline.csv", pipeline_csv(&rows).as_bytes())?;
    table_metrics(run, &rows);
    Ok(())
}

fn eval_asr_run(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    let l = load_pair(cfg)?;
    let p = &cfg.params;
    let attacks = p.attack_configs();
    let rows = run.timed("trials", || eval_asr(&setup(cfg, &l), &attacks, p.t_star, cfg.seed, p.eval_seeds, p.sequential))?;
    run.write("trials.csv", pipeline_csv(&rows).as_bytes())?;
    run.write("asr_summary.csv", asr_summary_csv(&aggregate_trials(&rows)).as_bytes())?;
    table_metrics(run, &rows);
    if let Some(aug_path) = &cfg.paths.augmented {
        let augmented = load_classifier(aug_path)?;
        check_compatible(&augmented, &l.ddpm)?;
        let mut report = Vec::new();
        for k in 0..p.eval_seeds {
            let seed = derive_seed(cfg.seed, &format!("trial-{k}"));
            let (images, labels) = benign_eval_set(seed, p.n_images, p.harmful_class);
            let rs = ReportSetup {
                images: &images,
                labels: &labels,
                harmful_class: p.harmful_class,
                gaussian_sigma: p.gaussian_sigma,
                attacks: &attacks,
                purifier: &l.ddpm,
                t_star: p.t_star,
                seed,
            };
            report.extend(robustness_report(&l.classifier, &augmented, &rs)?);
        }
        run.write("report.csv", report_csv(&report).as_bytes())?;
    }
    Ok(())
}

fn sweep_run(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    let l = load_pair(cfg)?;
    let p = &cfg.params;
    let mut times = Vec::new();
    let rows = sweep_tstar(&setup(cfg, &l), &p.attack_configs(), &p.t_stars, cfg.seed, |t, s| times.push((t, s)))?;
    for (t, s) in times {
        run.add_stage_time(&format!("purify/t*={t}"), s);
    }
    run.write("sweep.csv", sweep_csv(&rows).as_bytes())?;
    let passing = rows.iter().filter(|r| r.gaussian_like).count();
    run.metric("gaussian_like_rows", passing as f64);
    Ok(())
}

/// Reports that failed, by name.
pub fn failed_reports(reports: &[ConjectureReport]) -> Vec<&str> {
    reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect()
}

fn verify_run(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    let model = load_classifier(cfg.paths.classifier.as_ref().expect("validated"))?;
    let mut suite = cfg.params.suite.clone();
    suite.seed = derive_seed(cfg.seed, "suite");
    let n = suite.attack_images.max(suite.lipschitz_points);
    let (benign, _) = benign_eval_set(derive_seed(cfg.seed, "verify"), n, suite.degradation.harmful_class);
    let reports = run.timed("suite", || run_suite(&model, &benign, &suite))?;
    run.write_json("conjectures.json", &reports)?;
    run.metric("reports", reports.len() as f64);
    run.metric("failed_reports", failed_reports(&reports).len() as f64);
    Ok(())
}
