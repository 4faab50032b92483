use serde::{Deserialize, Serialize};

/// Sinusoidal timestep features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    pub timestep: usize,
    pub embedding: Vec<f64>,
}

impl TimeEmbedding {
    /// `dim` must be even; half sines, half cosines over geometric frequencies.
    pub fn new(timestep: usize, dim: usize) -> Self {
        let half = dim / 2;
        let mut embedding = Vec::with_capacity(dim);
        for i in 0..half {
            let freq = 1.0 / 1000f64.powf(i as f64 / half as f64);
            embedding.push((timestep as f64 * freq).sin());
        }
        for i in 0..half {
            let freq = 1.0 / 1000f64.powf(i as f64 / half as f64);
            embedding.push((timestep as f64 * freq).cos());
        }
        Self { timestep, embedding }
    }
}
