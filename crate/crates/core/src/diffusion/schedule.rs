use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};

/// Linear-β DDPM schedule. Vectors are indexed by timestep; index 0 is the
/// clean sample (`beta = 0`, `alpha_bar = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    timesteps: usize,
    beta_start: f64,
    beta_end: f64,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleParams {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self { timesteps: 1000, beta_start: 1e-4, beta_end: 0.02 }
    }
}

impl NoiseSchedule {
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps < 2 {
            return param_err("schedule needs at least two timesteps");
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return param_err(format!("need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}"));
        }
        let mut betas = vec![0.0];
        for i in 0..timesteps {
            betas.push(beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64);
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(timesteps + 1);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self { timesteps, beta_start, beta_end, betas, alphas, alpha_bars })
    }

    pub fn from_params(p: ScheduleParams) -> Result<Self> {
        Self::linear(p.timesteps, p.beta_start, p.beta_end)
    }

    pub fn params(&self) -> ScheduleParams {
        ScheduleParams { timesteps: self.timesteps, beta_start: self.beta_start, beta_end: self.beta_end }
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn check_timestep(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.timesteps {
            return param_err(format!("timestep {t} outside [{min}, {}]", self.timesteps));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::from_params(ScheduleParams::default()).expect("default schedule is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_invariants() {
        let s = NoiseSchedule::default();
        assert_eq!(s.timesteps(), 1000);
        assert_eq!(s.alpha_bar(0), 1.0);
        for t in 1..s.timesteps() {
            assert!(0.0 < s.beta(t) && s.beta(t) < s.beta(t + 1) && s.beta(t + 1) < 1.0);
            assert!(s.alpha_bar(t + 1) < s.alpha_bar(t));
        }
        assert!((s.beta(1) - 1e-4).abs() < 1e-18);
        assert!((s.beta(1000) - 0.02).abs() < 1e-15);
        assert!(s.alpha_bar(1000) < 0.01, "{}", s.alpha_bar(1000));
    }

    #[test]
    fn rejects_bad_betas() {
        assert!(NoiseSchedule::linear(10, 0.02, 0.01).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.01).is_err());
        assert!(NoiseSchedule::linear(1, 0.01, 0.02).is_err());
    }
}
