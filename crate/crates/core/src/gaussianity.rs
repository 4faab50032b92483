//! Residual-distribution analysis: kurtosis, Q-Q deviation against a fitted
//! Gaussian, per-channel averaging and the Gaussian-like gate.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{param_err, Error, Result};
use crate::grid::ImageGrid;

/// `3 <= kurtosis <= 6` and `qq_deviation <= 0.01` (pixel units in `[0,1]`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianGate {
    pub kurtosis_min: f64,
    pub kurtosis_max: f64,
    pub qq_max: f64,
}

impl Default for GaussianGate {
    fn default() -> Self {
        Self { kurtosis_min: 3.0, kurtosis_max: 6.0, qq_max: 0.01 }
    }
}

impl GaussianGate {
    pub fn passes(&self, kurtosis: f64, qq_deviation: f64) -> bool {
        kurtosis >= self.kurtosis_min && kurtosis <= self.kurtosis_max && qq_deviation <= self.qq_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub kurtosis: f64,
    pub qq_deviation: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub per_channel: Vec<ChannelStats>,
    pub avg_kurtosis: f64,
    pub avg_qq_deviation: f64,
    pub gaussian_like: bool,
}

impl ResidualStats {
    pub fn from_channels(per_channel: Vec<ChannelStats>, gate: &GaussianGate) -> Self {
        let n = per_channel.len() as f64;
        let avg_kurtosis = per_channel.iter().map(|c| c.kurtosis).sum::<f64>() / n;
        let avg_qq_deviation = per_channel.iter().map(|c| c.qq_deviation).sum::<f64>() / n;
        Self {
            gaussian_like: gate.passes(avg_kurtosis, avg_qq_deviation),
            per_channel,
            avg_kurtosis,
            avg_qq_deviation,
        }
    }

    pub fn avg_std(&self) -> f64 {
        self.per_channel.iter().map(|c| c.std).sum::<f64>() / self.per_channel.len() as f64
    }

    pub fn avg_mean(&self) -> f64 {
        self.per_channel.iter().map(|c| c.mean).sum::<f64>() / self.per_channel.len() as f64
    }
}

/// Population mean and standard deviation.
fn moments(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn check_spread(samples: &[f64], min_len: usize, channel: usize) -> Result<()> {
    if samples.len() < min_len {
        return param_err(format!("need at least {min_len} samples, got {}", samples.len()));
    }
    let first = samples[0];
    if samples.iter().all(|&v| v == first) {
        return Err(Error::Degenerate { channel, reason: "constant values (zero spread)".into() });
    }
    Ok(())
}

/// Fourth standardized moment with population (divide-by-N) estimators.
pub fn kurtosis(samples: &[f64]) -> Result<f64> {
    check_spread(samples, 4, 0)?;
    Ok(kurtosis_unchecked(samples))
}

fn kurtosis_unchecked(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let (mean, _) = moments(samples);
    let (m2, m4) = samples.iter().fold((0.0, 0.0), |(m2, m4), x| {
        let d2 = (x - mean) * (x - mean);
        (m2 + d2, m4 + d2 * d2)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    m4 / (m2 * m2)
}

/// Standard normal quantiles at the plotting positions `(i - 0.5) / n`,
/// exactly antisymmetric about the median.
pub fn normal_plotting_quantiles(n: usize) -> Vec<f64> {
    let mut z = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let p = (i as f64 + 0.5) / n as f64;
        let q = if 2 * i + 1 == n { 0.0 } else { normal_quantile(p) };
        z[i] = q;
        z[n - 1 - i] = -q;
    }
    z
}

/// Root-mean-square gap between sorted samples and the quantiles of the
/// Gaussian fitted to the samples' own mean and (population) std.
pub fn qq_deviation(samples: &[f64]) -> Result<f64> {
    check_spread(samples, 8, 0)?;
    Ok(qq_deviation_unchecked(samples))
}

fn qq_deviation_unchecked(samples: &[f64]) -> f64 {
    let (mean, std) = moments(samples);
    let sorted = sorted_copy(samples);
    let z = normal_plotting_quantiles(sorted.len());
    let sse: f64 = sorted.iter().zip(&z).map(|(s, z)| (s - (mean + std * z)).powi(2)).sum();
    (sse / sorted.len() as f64).sqrt()
}

fn sorted_copy(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Inverse standard normal CDF.
///
/// Acklam's rational approximation followed by one Halley refinement step,
/// giving errors well below 1e-12 over `(0, 1)`.
pub fn normal_quantile(p: f64) -> f64 {
    #[allow(clippy::excessive_precision)]
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // Halley step on Phi(x) - p.
    let e = 0.5 * erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

pub fn channel_stats(samples: &[f64], channel: usize) -> Result<ChannelStats> {
    check_spread(samples, 8, channel)?;
    let (mean, std) = moments(samples);
    Ok(ChannelStats {
        kurtosis: kurtosis_unchecked(samples),
        qq_deviation: qq_deviation_unchecked(samples),
        mean,
        std,
    })
}

/// Minimum cells per channel accepted by [`analyze_residual`].
pub const MIN_CELLS_PER_CHANNEL: usize = 64;

pub fn analyze_residual(r: &ImageGrid) -> Result<ResidualStats> {
    analyze_residual_with(r, &GaussianGate::default())
}

pub fn analyze_residual_with(r: &ImageGrid, gate: &GaussianGate) -> Result<ResidualStats> {
    let shape = r.shape();
    if shape.pixels() < MIN_CELLS_PER_CHANNEL {
        return param_err(format!(
            "residual has {} cells per channel, need at least {MIN_CELLS_PER_CHANNEL}",
            shape.pixels()
        ));
    }
    let per_channel = (0..shape.channels)
        .map(|c| channel_stats(&r.channel(c), c))
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualStats::from_channels(per_channel, gate))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub channel: usize,
    pub bin_center: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqRow {
    pub channel: usize,
    pub theoretical: f64,
    pub sample: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlotData {
    pub histogram: Vec<HistogramRow>,
    pub qq: Vec<QqRow>,
}

impl PlotData {
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("channel,bin_center,count\n");
        for r in &self.histogram {
            let _ = writeln!(out, "{},{:?},{}", r.channel, r.bin_center, r.count);
        }
        out
    }

    pub fn qq_csv(&self) -> String {
        let mut out = String::from("channel,theoretical,sample\n");
        for r in &self.qq {
            let _ = writeln!(out, "{},{:?},{:?}", r.channel, r.theoretical, r.sample);
        }
        out
    }
}

/// Histogram rows per channel (equal-width bins over the channel's range) and
/// Q-Q pairs against the fitted Gaussian.
pub fn export_plot_data(r: &ImageGrid, bins: usize) -> Result<PlotData> {
    if bins < 8 {
        return param_err(format!("need at least 8 bins, got {bins}"));
    }
    analyze_residual(r)?;
    let mut data = PlotData::default();
    for c in 0..r.shape().channels {
        let samples = r.channel(c);
        let sorted = sorted_copy(&samples);
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for v in &samples {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        data.histogram.extend(counts.into_iter().enumerate().map(|(b, count)| HistogramRow {
            channel: c,
            bin_center: lo + (b as f64 + 0.5) * width,
            count,
        }));
        let (mean, std) = moments(&samples);
        let z = normal_plotting_quantiles(sorted.len());
        data.qq.extend(sorted.iter().zip(&z).map(|(&s, z)| QqRow {
            channel: c,
            theoretical: mean + std * z,
            sample: s,
        }));
    }
    Ok(data)
}
