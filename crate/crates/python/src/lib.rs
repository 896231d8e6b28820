//! Python bindings: feature extraction, the student model, complexity
//! analysis, distillation loss, the learning-rate schedule, INT8
//! quantization and the command-line entry point.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use tfsep::features::{AudioClip, FeatureConfig, FeatureMap};
use tfsep::model::ModelConfig;
use tfsep::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Resolves a TOML run configuration over the built-in defaults.
fn run_config(toml: Option<&str>, overrides: Vec<String>) -> PyResult<tfsep::cli::RunConfig> {
    tfsep::cli::resolve(toml, &overrides).map_err(to_py)
}

/// Rows are mel bins, columns are frames.
fn to_map(rows: Vec<Vec<f32>>) -> PyResult<FeatureMap> {
    let mel = rows.len();
    let frames = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != frames) {
        return Err(PyValueError::new_err("feature rows have unequal lengths"));
    }
    FeatureMap::new("py", mel, frames, rows.into_iter().flatten().collect()).map_err(to_py)
}

fn from_map(map: &FeatureMap) -> Vec<Vec<f32>> {
    map.values.chunks(map.frames).map(<[f32]>::to_vec).collect()
}

/// Log-mel feature extractor.
#[pyclass(name = "FeatureExtractor", frozen)]
struct PyFeatureExtractor(tfsep::features::FeatureExtractor);

#[pymethods]
impl PyFeatureExtractor {
    /// `config` is a TOML `[features]` table body; defaults when omitted.
    #[new]
    #[pyo3(signature = (config = None))]
    fn new(config: Option<&str>) -> PyResult<Self> {
        let cfg: FeatureConfig = match config {
            Some(text) => toml_section(text)?,
            None => FeatureConfig::default(),
        };
        Ok(Self(tfsep::features::FeatureExtractor::new(cfg).map_err(to_py)?))
    }

    /// Returns a `mel_bins x frames` nested list.
    fn extract(&self, samples: Vec<f64>, sample_rate: u32) -> PyResult<Vec<Vec<f32>>> {
        let clip = AudioClip::new("py", samples, sample_rate).map_err(to_py)?;
        Ok(from_map(&self.0.extract(&clip).map_err(to_py)?))
    }

    #[getter]
    fn n_mels(&self) -> usize {
        self.0.config().n_mels
    }
}

fn toml_section<T: serde::de::DeserializeOwned>(text: &str) -> PyResult<T> {
    toml::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Parameter count, MACs and INT8 size against the budget.
#[pyclass(name = "Complexity", frozen, get_all)]
struct PyComplexity {
    param_count: usize,
    macs_per_inference: usize,
    int8_size_bytes: usize,
    size_limit_bytes: usize,
    budget_ok: bool,
}

impl From<tfsep::model::ComplexityReport> for PyComplexity {
    fn from(r: tfsep::model::ComplexityReport) -> Self {
        Self {
            param_count: r.param_count,
            macs_per_inference: r.macs_per_inference,
            int8_size_bytes: r.int8_size_bytes,
            size_limit_bytes: r.size_limit_bytes,
            budget_ok: r.budget_ok,
        }
    }
}

#[pymethods]
impl PyComplexity {
    fn __repr__(&self) -> String {
        format!(
            "Complexity(params={}, macs={}, int8_bytes={}, budget_ok={})",
            self.param_count, self.macs_per_inference, self.int8_size_bytes, self.budget_ok
        )
    }
}

/// Complexity of the model described by a full run configuration.
#[pyfunction]
#[pyo3(signature = (config = None, overrides = Vec::new()))]
fn analyze(config: Option<&str>, overrides: Vec<String>) -> PyResult<PyComplexity> {
    let cfg = run_config(config, overrides)?;
    Ok(tfsep::model::analyze(&cfg.model).map_err(to_py)?.into())
}

/// Float student network.
#[pyclass(name = "StudentModel", frozen)]
struct PyStudent(tfsep::model::StudentModel);

#[pymethods]
impl PyStudent {
    /// Builds from a full run configuration's `[model]` table.
    #[staticmethod]
    #[pyo3(signature = (config = None, seed = 0, overrides = Vec::new()))]
    fn build(config: Option<&str>, seed: u64, overrides: Vec<String>) -> PyResult<Self> {
        let cfg: ModelConfig = run_config(config, overrides)?.model;
        Ok(Self(tfsep::model::StudentModel::build(cfg, seed).map_err(to_py)?))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(tfsep::model::StudentModel::load(&path).map_err(to_py)?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(to_py)
    }

    fn forward(&self, features: Vec<Vec<f32>>) -> PyResult<Vec<f64>> {
        self.0.forward(&to_map(features)?).map_err(to_py)
    }

    fn embedding(&self, features: Vec<Vec<f32>>) -> PyResult<Vec<f64>> {
        self.0.embedding(&to_map(features)?).map_err(to_py)
    }

    fn complexity(&self) -> PyComplexity {
        self.0.complexity().into()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.0.n_classes()
    }

    /// `(mel_bins, frames)`.
    #[getter]
    fn input_shape(&self) -> (usize, usize) {
        self.0.config().input_shape
    }

    /// Parameter names in checkpoint order.
    fn parameter_names(&self) -> Vec<String> {
        self.0.params.iter().map(|p| p.name.clone()).collect()
    }

    /// Calibrates activations on `calibration` and quantizes to INT8.
    fn quantize(&self, calibration: Vec<Vec<Vec<f32>>>) -> PyResult<PyQuantized> {
        let maps = calibration.into_iter().map(to_map).collect::<PyResult<Vec<_>>>()?;
        if maps.is_empty() {
            return Err(PyValueError::new_err("calibration set is empty"));
        }
        let ranges = tfsep::quantize::calibrate(&self.0, [&maps[..]]).map_err(to_py)?;
        Ok(PyQuantized(tfsep::quantize::quantize_model(&self.0, &ranges).map_err(to_py)?))
    }
}

/// INT8 student network.
#[pyclass(name = "QuantizedModel", frozen)]
struct PyQuantized(tfsep::quantize::QuantizedModel);

#[pymethods]
impl PyQuantized {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(tfsep::quantize::QuantizedModel::load(&path).map_err(to_py)?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(to_py)
    }

    fn forward(&self, features: Vec<Vec<f32>>) -> PyResult<Vec<f64>> {
        self.0.forward(&to_map(features)?).map_err(to_py)
    }

    /// Serialized payload size, equal to the predicted INT8 size.
    #[getter]
    fn size_bytes(&self) -> usize {
        self.0.size_bytes()
    }

    fn dequantized(&self) -> PyResult<PyStudent> {
        Ok(PyStudent(self.0.dequantized().map_err(to_py)?))
    }
}

/// Cosine learning rate with warm restarts.
#[pyclass(name = "Sgdr", frozen)]
struct PySgdr(tfsep::trainer::Sgdr);

#[pymethods]
impl PySgdr {
    #[new]
    #[pyo3(signature = (initial_lr, t0 = 10.0, tmult = 2.0, min_lr = 0.0))]
    fn new(initial_lr: f64, t0: f64, tmult: f64, min_lr: f64) -> PyResult<Self> {
        let s = tfsep::trainer::Sgdr { initial_lr, min_lr, t0, tmult };
        s.validate().map_err(to_py)?;
        Ok(Self(s))
    }

    /// Rate at fractional epoch `progress`.
    fn lr(&self, progress: f64) -> f64 {
        self.0.lr(progress)
    }

    /// Restart epochs up to and including `until`.
    fn restarts(&self, until: f64) -> Vec<f64> {
        self.0.restarts(until)
    }
}

#[pyfunction]
fn temperature_softmax(logits: Vec<f64>, tau: f64) -> PyResult<Vec<f64>> {
    tfsep::distill::temperature_softmax(&logits, tau).map_err(to_py)
}

/// Returns `(total, cross_entropy, kl, gradient)`.
#[pyfunction]
#[pyo3(signature = (student, teacher, target, lam = 0.02, tau = 2.0))]
fn kd_loss(
    student: Vec<f64>,
    teacher: Vec<f64>,
    target: Vec<f64>,
    lam: f64,
    tau: f64,
) -> PyResult<(f64, f64, f64, Vec<f64>)> {
    let cfg = tfsep::distill::KdConfig { lambda: lam, temperature: tau };
    let l = tfsep::distill::kd_loss(&student, &teacher, &target, &cfg).map_err(to_py)?;
    Ok((l.total, l.cross_entropy, l.kl, l.grad))
}

/// Averages teacher-logit files (CSV or TLOG) and writes the result.
#[pyfunction]
fn ensemble(inputs: Vec<PathBuf>, output: PathBuf) -> PyResult<usize> {
    let tables = inputs
        .iter()
        .map(|p| tfsep::distill::TeacherLogitsTable::read(p))
        .collect::<tfsep::Result<Vec<_>>>()
        .map_err(to_py)?;
    let merged = tfsep::distill::ensemble_logits(&tables).map_err(to_py)?;
    merged.write(&output).map_err(to_py)?;
    Ok(merged.len())
}

/// Runs the command-line interface with `args` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    tfsep::cli::run(std::iter::once("tfsep".to_string()).chain(args))
}

#[pymodule]
fn tfsep_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFeatureExtractor>()?;
    m.add_class::<PyComplexity>()?;
    m.add_class::<PyStudent>()?;
    m.add_class::<PyQuantized>()?;
    m.add_class::<PySgdr>()?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(temperature_softmax, m)?)?;
    m.add_function(wrap_pyfunction!(kd_loss, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("MAC_BUDGET", tfsep::model::MAC_BUDGET)?;
    m.add("SIZE_BUDGET_BYTES", tfsep::model::SIZE_BUDGET_BYTES)?;
    Ok(())
}
