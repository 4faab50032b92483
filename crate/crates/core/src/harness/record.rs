use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunConfig;
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::io::{encode_netpbm, encode_residual_csv};

pub const RECORD_FILE: &str = "record.json";
pub const CONFIG_FILE: &str = "config.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallTime {
    pub start_unix: f64,
    pub end_unix: f64,
    /// Seconds spent per named stage, e.g. `purify/t*=40`.
    pub stages: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config: RunConfig,
    pub wall_time: Option<WallTime>,
    pub manifest: Vec<ManifestEntry>,
    pub metrics: BTreeMap<String, f64>,
}

impl ExperimentRecord {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(dir.join(RECORD_FILE))?)?)
    }

    /// Re-hashes every manifest entry under `dir`.
    pub fn verify_manifest(&self, dir: &Path) -> Result<()> {
        for e in &self.manifest {
            let bytes = std::fs::read(dir.join(&e.path))?;
            if sha256_hex(&bytes) != e.sha256 {
                return Err(Error::Config(format!("manifest hash mismatch for {}", e.path)));
            }
        }
        Ok(())
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Output directory of one run. Every file goes through [`RunDir::write`] so
/// that it lands in the manifest; [`RunDir::finish`] writes the record.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    manifest: Vec<ManifestEntry>,
    metrics: BTreeMap<String, f64>,
    timing: Option<(f64, BTreeMap<String, f64>)>,
}

impl RunDir {
    /// Creates the directory. A directory that already holds a record is
    /// refused: records are never overwritten.
    pub fn create(root: &Path, record_wall_time: bool) -> Result<Self> {
        if root.join(RECORD_FILE).exists() {
            return Err(Error::Config(format!("{} already holds a run record", root.display())));
        }
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest: Vec::new(),
            metrics: BTreeMap::new(),
            timing: record_wall_time.then(|| (unix_now(), BTreeMap::new())),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        if rel == RECORD_FILE || self.manifest.iter().any(|e| e.path == rel) {
            return Err(Error::Config(format!("{rel} written twice in one run")));
        }
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.manifest.push(ManifestEntry { path: rel.to_string(), sha256: sha256_hex(bytes) });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// `.ppm`/`.pgm` for pixel-domain grids, residual CSV otherwise; the
    /// extension is appended here.
    pub fn write_grid(&mut self, stem: &str, grid: &ImageGrid) -> Result<PathBuf> {
        if grid.pixel_domain() {
            let ext = if grid.shape().channels == 1 { "pgm" } else { "ppm" };
            self.write(&format!("{stem}.{ext}"), encode_netpbm(grid).as_bytes())
        } else {
            self.write(&format!("{stem}.csv"), encode_residual_csv(grid).as_bytes())
        }
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    /// Adds `secs` to stage `name` when wall time is on.
    pub fn add_stage_time(&mut self, name: &str, secs: f64) {
        if let Some((_, stages)) = &mut self.timing {
            *stages.entry(name.to_string()).or_insert(0.0) += secs;
        }
    }

    /// Runs `f`, adding its duration to stage `name` when wall time is on.
    pub fn timed<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.add_stage_time(name, start.elapsed().as_secs_f64());
        out
    }

    pub fn finish(mut self, config: &RunConfig) -> Result<ExperimentRecord> {
        self.write_json(CONFIG_FILE, config)?;
        let record = ExperimentRecord {
            config: config.clone(),
            wall_time: self.timing.map(|(start_unix, stages)| WallTime { start_unix, end_unix: unix_now(), stages }),
            manifest: self.manifest,
            metrics: self.metrics,
        };
        let mut text = serde_json::to_string_pretty(&record)?;
        text.push('\n');
        std::fs::write(self.root.join(RECORD_FILE), text)?;
        Ok(record)
    }
}
