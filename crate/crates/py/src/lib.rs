//! Python bindings: image grids, seeded streams, the classifier and diffusion
//! purifier, PGD attacks, residual analysis and whole experiment runs.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use puridiff::attacks::{attack_success_rate, pgd_attack_traced, predict, AttackConfig, AttackTarget};
use puridiff::diffusion::{train_ddpm as train_ddpm_core, DdpmTrainConfig, DiffusionCheckpoint, DiffusionModel};
use puridiff::gaussianity::{self, ResidualStats};
use puridiff::harness::{self, RunConfig};
use puridiff::models::{MlpCheckpoint, MlpModel};
use puridiff::robust_train::{self, AugmentPolicy, ClassifierConfig};
use puridiff::{data, io, Error, Shape};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Row-major `(y, x, c)` image grid. Pixel-domain grids hold values in `[0, 1]`.
#[pyclass(name = "ImageGrid", module = "puridiff_py", from_py_object)]
#[derive(Clone)]
pub struct PyImageGrid {
    inner: puridiff::ImageGrid,
}

impl From<puridiff::ImageGrid> for PyImageGrid {
    fn from(inner: puridiff::ImageGrid) -> Self {
        Self { inner }
    }
}

fn unwrap_grids(grids: &[PyImageGrid]) -> Vec<puridiff::ImageGrid> {
    grids.iter().map(|g| g.inner.clone()).collect()
}

#[pymethods]
impl PyImageGrid {
    #[new]
    #[pyo3(signature = (height, width, channels, data, pixel_domain = true))]
    fn new(height: usize, width: usize, channels: usize, data: Vec<f64>, pixel_domain: bool) -> PyResult<Self> {
        let shape = Shape::new(height, width, channels).map_err(to_py)?;
        puridiff::ImageGrid::from_vec(shape, data, pixel_domain).map(Into::into).map_err(to_py)
    }

    /// `(height, width, channels)`.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let s = self.inner.shape();
        (s.height, s.width, s.channels)
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    #[getter]
    fn pixel_domain(&self) -> bool {
        self.inner.pixel_domain()
    }

    fn channel(&self, c: usize) -> PyResult<Vec<f64>> {
        if c >= self.inner.shape().channels {
            return Err(PyValueError::new_err(format!("channel {c} out of range")));
        }
        Ok(self.inner.channel(c))
    }

    fn clamped(&self) -> Self {
        self.inner.clamped().into()
    }

    fn max_abs(&self) -> f64 {
        self.inner.max_abs()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    /// Reads a `.ppm`/`.pgm` image or a residual `.csv`.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        io::read_grid(&path).map(Into::into).map_err(to_py)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        io::write_grid(&path, &self.inner).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        let (h, w, c) = self.shape();
        format!("ImageGrid({h}x{w}x{c}, pixel_domain={})", self.inner.pixel_domain())
    }
}

/// Seeded random stream; `derive` gives an independent child stream per label.
#[pyclass(name = "Rng", module = "puridiff_py")]
pub struct PyRng {
    inner: puridiff::Rng,
}

#[pymethods]
impl PyRng {
    #[new]
    fn new(seed: u64) -> Self {
        Self { inner: puridiff::Rng::new(seed) }
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    fn derive(&self, label: &str) -> Self {
        Self { inner: self.inner.derive(label) }
    }

    fn normal(&mut self) -> f64 {
        self.inner.normal()
    }

    fn uniform(&mut self) -> f64 {
        self.inner.uniform()
    }

    fn gaussian_grid(&mut self, height: usize, width: usize, channels: usize, sigma: f64) -> PyResult<PyImageGrid> {
        let shape = Shape::new(height, width, channels).map_err(to_py)?;
        puridiff::sample_gaussian(&mut self.inner, shape, sigma).map(Into::into).map_err(to_py)
    }
}

/// Image classifier (an MLP over flattened pixels).
#[pyclass(name = "Classifier", module = "puridiff_py")]
pub struct PyClassifier {
    model: MlpModel,
    seed: u64,
}

#[pymethods]
impl PyClassifier {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| to_py(e.into()))?;
        let ckpt: MlpCheckpoint = serde_json::from_str(&text).map_err(json_err)?;
        let seed = ckpt.seed;
        Ok(Self { model: ckpt.into_model().map_err(to_py)?, seed })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let ckpt = MlpCheckpoint::new(&self.model, self.seed, serde_json::Value::Null);
        let text = serde_json::to_string(&ckpt).map_err(json_err)?;
        std::fs::write(&path, text).map_err(|e| to_py(e.into()))
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.model.layer_sizes().to_vec()
    }

    fn logits(&self, x: &PyImageGrid) -> PyResult<Vec<f64>> {
        self.model.forward(x.inner.data()).map_err(to_py)
    }

    fn predict(&self, x: &PyImageGrid) -> PyResult<usize> {
        predict(&self.model, &x.inner).map_err(to_py)
    }

    /// Fraction of `images` classified as `harmful_class`.
    fn attack_success_rate(&self, images: Vec<PyImageGrid>, harmful_class: usize) -> PyResult<f64> {
        attack_success_rate(&self.model, &unwrap_grids(&images), harmful_class).map_err(to_py)
    }

    fn accuracy(&self, images: Vec<PyImageGrid>, labels: Vec<usize>) -> PyResult<f64> {
        robust_train::accuracy(&self.model, &unwrap_grids(&images), &labels).map_err(to_py)
    }
}

/// Diffusion purifier for a fixed image shape.
#[pyclass(name = "Ddpm", module = "puridiff_py")]
pub struct PyDdpm {
    model: DiffusionModel,
    seed: u64,
}

#[pymethods]
impl PyDdpm {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| to_py(e.into()))?;
        let ckpt: DiffusionCheckpoint = serde_json::from_str(&text).map_err(json_err)?;
        let seed = ckpt.denoiser.seed;
        Ok(Self { model: ckpt.into_model().map_err(to_py)?, seed })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let ckpt = DiffusionCheckpoint::new(&self.model, self.seed, serde_json::Value::Null);
        let text = serde_json::to_string(&ckpt).map_err(json_err)?;
        std::fs::write(&path, text).map_err(|e| to_py(e.into()))
    }

    #[getter]
    fn steps(&self) -> usize {
        self.model.schedule().timesteps()
    }

    /// Diffuse `x` to step `t_star`, then run the reverse chain back to 0.
    fn purify(&self, py: Python<'_>, x: &PyImageGrid, t_star: usize, rng: &mut PyRng) -> PyResult<PyImageGrid> {
        let (model, x, r) = (&self.model, &x.inner, &mut rng.inner);
        py.detach(|| model.purify(x, t_star, r)).map(Into::into).map_err(to_py)
    }

    fn sample(&self, py: Python<'_>, rng: &mut PyRng) -> PyImageGrid {
        let (model, r) = (&self.model, &mut rng.inner);
        py.detach(|| model.sample(r)).into()
    }
}

/// Per-channel kurtosis and Q-Q deviation of a residual, plus the gate verdict.
#[pyclass(name = "ResidualStats", module = "puridiff_py", get_all)]
pub struct PyResidualStats {
    kurtosis: f64,
    qq_deviation: f64,
    gaussian_like: bool,
    /// `(kurtosis, qq_deviation, mean, std)` per channel.
    per_channel: Vec<(f64, f64, f64, f64)>,
}

impl From<ResidualStats> for PyResidualStats {
    fn from(s: ResidualStats) -> Self {
        Self {
            kurtosis: s.avg_kurtosis,
            qq_deviation: s.avg_qq_deviation,
            gaussian_like: s.gaussian_like,
            per_channel: s.per_channel.iter().map(|c| (c.kurtosis, c.qq_deviation, c.mean, c.std)).collect(),
        }
    }
}

#[pymethods]
impl PyResidualStats {
    fn __repr__(&self) -> String {
        format!(
            "ResidualStats(kurtosis={:.4}, qq_deviation={:.5}, gaussian_like={})",
            self.kurtosis, self.qq_deviation, self.gaussian_like
        )
    }
}

#[pyfunction]
fn derive_seed(root: u64, label: &str) -> u64 {
    puridiff::derive_seed(root, label)
}

/// Toy dataset of `n` images: `(images, labels)`.
#[pyfunction]
fn generate_dataset(n: usize, seed: u64) -> (Vec<PyImageGrid>, Vec<usize>) {
    let d = data::generate(n, seed);
    (d.images.into_iter().map(Into::into).collect(), d.labels)
}

#[pyfunction]
fn residual(x: &PyImageGrid, reference: &PyImageGrid) -> PyResult<PyImageGrid> {
    puridiff::residual(&x.inner, &reference.inner).map(Into::into).map_err(to_py)
}

#[pyfunction]
fn add_clamped(a: &PyImageGrid, b: &PyImageGrid) -> PyResult<PyImageGrid> {
    puridiff::add_clamped(&a.inner, &b.inner).map(Into::into).map_err(to_py)
}

#[pyfunction]
fn kurtosis(samples: Vec<f64>) -> PyResult<f64> {
    gaussianity::kurtosis(&samples).map_err(to_py)
}

#[pyfunction]
fn qq_deviation(samples: Vec<f64>) -> PyResult<f64> {
    gaussianity::qq_deviation(&samples).map_err(to_py)
}

#[pyfunction]
fn analyze_residual(r: &PyImageGrid) -> PyResult<PyResidualStats> {
    gaussianity::analyze_residual(&r.inner).map(Into::into).map_err(to_py)
}

/// Targeted L-inf PGD toward `target_class`; returns `(image, loss_trajectory)`.
#[pyfunction]
#[pyo3(signature = (classifier, x, epsilon, target_class, rng, steps = 500, step_size = 1.0 / 255.0, random_start = false))]
#[allow(clippy::too_many_arguments)]
fn pgd_attack(
    py: Python<'_>,
    classifier: &PyClassifier,
    x: &PyImageGrid,
    epsilon: f64,
    target_class: usize,
    rng: &mut PyRng,
    steps: usize,
    step_size: f64,
    random_start: bool,
) -> PyResult<(PyImageGrid, Vec<f64>)> {
    let cfg = AttackConfig { epsilon, steps, step_size, target: AttackTarget::Class(target_class), random_start };
    let (model, x, r) = (&classifier.model, &x.inner, &mut rng.inner);
    let out = py.detach(|| pgd_attack_traced(model, x, &cfg, r)).map_err(to_py)?;
    Ok((out.image.into(), out.loss_trajectory))
}

/// Trains a classifier; `augment=True` uses the default Gaussian noise policy.
/// Returns `(classifier, clean_losses)`.
#[pyfunction]
#[pyo3(signature = (images, labels, seed, epochs = None, augment = false))]
fn train_classifier(
    py: Python<'_>,
    images: Vec<PyImageGrid>,
    labels: Vec<usize>,
    seed: u64,
    epochs: Option<usize>,
    augment: bool,
) -> PyResult<(PyClassifier, Vec<f64>)> {
    let mut cfg = ClassifierConfig { seed, ..Default::default() };
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let policy = augment.then(AugmentPolicy::default);
    let grids = unwrap_grids(&images);
    let trained =
        py.detach(|| robust_train::train_classifier(&grids, &labels, policy.as_ref(), &cfg)).map_err(to_py)?;
    Ok((PyClassifier { model: trained.model, seed }, trained.clean_losses))
}

/// Trains the diffusion purifier; returns `(ddpm, epoch_losses)`.
#[pyfunction]
#[pyo3(signature = (images, seed, epochs = None))]
fn train_ddpm(py: Python<'_>, images: Vec<PyImageGrid>, seed: u64, epochs: Option<usize>) -> PyResult<(PyDdpm, Vec<f64>)> {
    let mut cfg = DdpmTrainConfig { seed, ..Default::default() };
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let grids = unwrap_grids(&images);
    let trained = py.detach(|| train_ddpm_core(&grids, &cfg)).map_err(to_py)?;
    Ok((PyDdpm { model: trained.model, seed }, trained.epoch_losses))
}

/// Runs one experiment from a JSON run config (same format as the CLI's
/// `--config`) and returns the record as JSON.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg = RunConfig::from_json(config_json).map_err(to_py)?;
    let record = py.detach(|| harness::execute(&cfg)).map_err(to_py)?;
    serde_json::to_string(&record).map_err(json_err)
}

#[pymodule]
fn puridiff_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImageGrid>()?;
    m.add_class::<PyRng>()?;
    m.add_class::<PyClassifier>()?;
    m.add_class::<PyDdpm>()?;
    m.add_class::<PyResidualStats>()?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(residual, m)?)?;
    m.add_function(wrap_pyfunction!(add_clamped, m)?)?;
    m.add_function(wrap_pyfunction!(kurtosis, m)?)?;
    m.add_function(wrap_pyfunction!(qq_deviation, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_residual, m)?)?;
    m.add_function(wrap_pyfunction!(pgd_attack, m)?)?;
    m.add_function(wrap_pyfunction!(train_classifier, m)?)?;
    m.add_function(wrap_pyfunction!(train_ddpm, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("DEFAULT_T_STAR", harness::DEFAULT_T_STAR)?;
    m.add("HARMFUL_CLASS", data::HARMFUL_CLASS)?;
    Ok(())
}
