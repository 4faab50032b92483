use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attacks::{pgd_attack, AttackConfig};
use crate::diffusion::DiffusionModel;
use crate::error::{param_err, Result};
use crate::grid::{residual, ImageGrid};
use crate::models::{dot, norm, MlpModel};
use crate::rng::Rng;

/// Mean cosine similarities for one `(ε, t*)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub epsilon: f64,
    pub t_star: usize,
    /// noise-matched clean image vs adversarial
    pub c_n_adv: f64,
    /// noise-matched clean image vs purified
    pub c_n_diffused: f64,
    /// clean vs purified
    pub c_clean_diffused: f64,
    /// Mean std of `purified − clean`; the scale of the matched noise.
    pub residual_std: f64,
}

pub const SIMILARITY_HEADER: &str = "epsilon,t_star,c_n_adv,c_n_diffused,c_clean_diffused,residual_std";

pub fn similarity_csv(rows: &[SimilarityRow]) -> String {
    let mut out = format!("{SIMILARITY_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:?},{},{:?},{:?},{:?},{:?}",
            r.epsilon, r.t_star, r.c_n_adv, r.c_n_diffused, r.c_clean_diffused, r.residual_std
        );
    }
    out
}

/// Cosine similarity; zero when either vector vanishes.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// For each attack and `t*`, compares encoder embeddings of the adversarial
/// and purified images against a clean image carrying Gaussian noise of the
/// same scale as the purified residual.
pub fn embedding_similarity_sweep(
    encoder: &MlpModel,
    clean: &[ImageGrid],
    attacks: &[AttackConfig],
    t_stars: &[usize],
    dm: &DiffusionModel,
    rng: &Rng,
) -> Result<Vec<SimilarityRow>> {
    if clean.is_empty() || attacks.is_empty() || t_stars.is_empty() {
        return param_err("need at least one image, attack and t*");
    }
    let clean_emb: Vec<Vec<f64>> = clean.iter().map(|c| encoder.embed(c.data())).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for cfg in attacks {
        let eps = cfg.epsilon;
        let adv: Vec<ImageGrid> = clean
            .iter()
            .enumerate()
            .map(|(i, c)| pgd_attack(encoder, c, cfg, &mut rng.derive(&format!("attack/{eps}/{i}"))))
            .collect::<Result<_>>()?;
        let adv_emb: Vec<Vec<f64>> = adv.iter().map(|a| encoder.embed(a.data())).collect::<Result<_>>()?;
        for &t in t_stars {
            let (mut c_na, mut c_nd, mut c_cd, mut r_std) = (0.0, 0.0, 0.0, 0.0);
            for (i, c) in clean.iter().enumerate() {
                let mut r = rng.derive(&format!("purify/{eps}/{t}/{i}"));
                let diffused = dm.purify(&adv[i], t, &mut r)?;
                let sigma = std_dev(residual(&diffused, c)?.data());
                let noisy: Vec<f64> = c.data().iter().map(|v| v + sigma * r.normal()).collect();
                let n_emb = encoder.embed(&noisy)?;
                let d_emb = encoder.embed(diffused.data())?;
                c_na += cosine_similarity(&n_emb, &adv_emb[i]);
                c_nd += cosine_similarity(&n_emb, &d_emb);
                c_cd += cosine_similarity(&clean_emb[i], &d_emb);
                r_std += sigma;
            }
            let n = clean.len() as f64;
            rows.push(SimilarityRow {
                epsilon: eps,
                t_star: t,
                c_n_adv: c_na / n,
                c_n_diffused: c_nd / n,
                c_clean_diffused: c_cd / n,
                residual_std: r_std / n,
            });
        }
    }
    Ok(rows)
}
