//! Python bindings: gradient clipping, the Renyi accountant, the clip-norm
//! controller, synthetic data, and whole config-driven runs.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fedclip::clipnorm::{ClipGradVariant, ClippingState};
use fedclip::config::ExperimentConfig;
use fedclip::error::Error;
use fedclip::mechanism::NoiseConfig;
use fedclip::tensor::ParamVector;

fn to_py_err(err: Error) -> PyErr {
    match err {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_variant(token: &str) -> PyResult<ClipGradVariant> {
    match token {
        "scaled" => Ok(ClipGradVariant::Scaled),
        "direct" => Ok(ClipGradVariant::Direct),
        other => Err(PyValueError::new_err(format!(
            "unknown variant {other:?}, expected \"scaled\" or \"direct\""
        ))),
    }
}

/// Scale a gradient onto the L2 ball of radius clip_norm.
/// Returns (clipped_vector, was_clipped).
#[pyfunction]
fn clip_gradient(gradient: Vec<f64>, clip_norm: f64) -> PyResult<(Vec<f64>, bool)> {
    let g = ParamVector::new(gradient).map_err(to_py_err)?;
    let norm = g.l2_norm();
    let clipped = fedclip::mechanism::clip_gradient(&g, clip_norm).map_err(to_py_err)?;
    let was_clipped = fedclip::mechanism::norm_exceeds_clip(norm, clip_norm);
    Ok((clipped.values().to_vec(), was_clipped))
}

/// Clip each vector, average, and add one Gaussian noise draw with
/// per-coordinate std sigma * clip_norm. Deterministic in `seed`.
#[pyfunction]
fn noisy_mean(
    vectors: Vec<Vec<f64>>,
    clip_norm: f64,
    sigma: f64,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let clipped: Vec<ParamVector> = vectors
        .into_iter()
        .map(|v| {
            let g = ParamVector::new(v).map_err(to_py_err)?;
            fedclip::mechanism::clip_gradient(&g, clip_norm).map_err(to_py_err)
        })
        .collect::<PyResult<_>>()?;
    let batch_size = clipped.len();
    let noise = NoiseConfig::new(sigma, seed).map_err(to_py_err)?;
    let mean = fedclip::mechanism::noisy_mean(&clipped, clip_norm, &noise, batch_size)
        .map_err(to_py_err)?;
    Ok(mean.values().to_vec())
}

/// Renyi divergence of order `order` for the Gaussian mechanism at
/// noise multiplier `sigma`: order / (2 sigma^2).
#[pyfunction]
fn rdp_gaussian(sigma: f64, order: f64) -> PyResult<f64> {
    fedclip::accountant::rdp_gaussian(sigma, order).map_err(to_py_err)
}

/// Per-step Renyi divergence under Poisson subsampling at rate q.
#[pyfunction]
fn rdp_subsampled_gaussian(q: f64, sigma: f64, order: f64) -> PyResult<f64> {
    fedclip::accountant::rdp_subsampled_gaussian(q, sigma, order).map_err(to_py_err)
}

/// Convert accumulated Renyi divergences to (epsilon, best_order) at delta.
#[pyfunction]
fn epsilon_from_rdp(orders: Vec<f64>, rdp_totals: Vec<f64>, delta: f64) -> PyResult<(f64, f64)> {
    fedclip::accountant::epsilon_from_rdp(&orders, &rdp_totals, delta).map_err(to_py_err)
}

/// Smallest noise multiplier whose epsilon after `steps` subsampled steps
/// lands within [0.99, 1.0] of the target.
#[pyfunction]
fn calibrate_sigma(q: f64, steps: u64, target_epsilon: f64, delta: f64) -> PyResult<f64> {
    fedclip::accountant::calibrate_sigma(q, steps, target_epsilon, delta).map_err(to_py_err)
}

/// Running (epsilon, delta) account for one fixed mechanism.
#[pyclass]
struct PrivacyLedger {
    inner: fedclip::accountant::PrivacyLedger,
}

#[pymethods]
impl PrivacyLedger {
    #[new]
    fn new(q: f64, sigma: f64, delta: f64) -> PyResult<Self> {
        Ok(PrivacyLedger {
            inner: fedclip::accountant::PrivacyLedger::new(q, sigma, delta).map_err(to_py_err)?,
        })
    }

    fn observe(&mut self, steps: u64) {
        self.inner.observe(steps);
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.inner.steps
    }

    fn epsilon(&self) -> PyResult<(f64, f64)> {
        self.inner.epsilon().map_err(to_py_err)
    }
}

/// The clip-norm controller: descends kappa * C plus the model loss along
/// the clip-norm axis, never below the 1e-3 floor.
#[pyclass]
struct ClipTuner {
    inner: ClippingState,
}

#[pymethods]
impl ClipTuner {
    #[new]
    #[pyo3(signature = (clip_norm, penalty, lr, variant = "scaled", probe_width = 0.1))]
    fn new(
        clip_norm: f64,
        penalty: f64,
        lr: f64,
        variant: &str,
        probe_width: f64,
    ) -> PyResult<Self> {
        let inner = ClippingState::new(clip_norm, penalty, lr)
            .map_err(to_py_err)?
            .with_probe_width(probe_width)
            .with_variant(parse_variant(variant)?);
        inner.validate().map_err(to_py_err)?;
        Ok(ClipTuner { inner })
    }

    #[getter]
    fn clip_norm(&self) -> f64 {
        self.inner.clip_norm
    }

    fn composite_loss(&self, model_loss: f64) -> f64 {
        self.inner.composite_loss(model_loss)
    }

    /// Descent direction for a measured d(loss)/dC slope.
    fn gradient(&self, loss_slope: f64) -> f64 {
        self.inner.gradient(loss_slope)
    }

    fn descend(&mut self, gradient: f64) {
        self.inner.descend(gradient);
    }
}

/// Deterministic Gaussian class blobs rescaled to the unit cube.
/// Returns (features, labels).
#[pyfunction]
fn synth_blobs(
    num_classes: usize,
    input_dim: usize,
    n: usize,
    separation: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let dataset =
        fedclip::data::synth_blobs(num_classes, input_dim, n, separation, seed).map_err(to_py_err)?;
    let features = dataset.examples.iter().map(|e| e.features.clone()).collect();
    let labels = dataset.examples.iter().map(|e| e.label).collect();
    Ok((features, labels))
}

/// Run a full experiment from TOML config text, without writing files.
/// Returns one dict per round.
#[pyfunction]
fn run_config(py: Python<'_>, config_toml: &str, seed: u64) -> PyResult<Vec<Py<PyDict>>> {
    let cfg = ExperimentConfig::parse(config_toml).map_err(to_py_err)?;
    let mut sim = fedclip::harness::prepare(&cfg, seed).map_err(to_py_err)?;
    let records = sim.run(cfg.federation.rounds).map_err(to_py_err)?;
    let mut rows = Vec::with_capacity(records.len());
    for r in &records {
        let row = PyDict::new(py);
        row.set_item("round", r.round_index)?;
        row.set_item("train_loss", r.train_loss)?;
        row.set_item("test_accuracy", r.test_accuracy)?;
        row.set_item("epsilon", r.epsilon_so_far)?;
        row.set_item("best_order", r.best_order)?;
        row.set_item("mean_C", r.mean_clip_norm)?;
        row.set_item("clip_fraction", r.clip_fraction)?;
        rows.push(row.into());
    }
    Ok(rows)
}

#[pymodule]
fn fedclip_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(clip_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(noisy_mean, m)?)?;
    m.add_function(wrap_pyfunction!(rdp_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(rdp_subsampled_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon_from_rdp, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(synth_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_class::<PrivacyLedger>()?;
    m.add_class::<ClipTuner>()?;
    Ok(())
}
