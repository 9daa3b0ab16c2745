//! Python bindings: metrics, the tensor container, the noise model and
//! dataset generation. Arrays cross the boundary as flat lists in the
//! `[W][H]` layout.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use sonoseg::metrics::{self, SsimParams};
use sonoseg::noise::{fit_kde as fit, sample_pdf};
use sonoseg::pipeline::{self, PipelineConfig};
use sonoseg::tensor::{self, Metadata, Tensor};
use sonoseg::Rng;

fn py_err(e: sonoseg::Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    match e {
        sonoseg::Error::Io { .. } => PyIOError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn same_len(a: &[f64], b: &[f64]) -> PyResult<()> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Peak signal-to-noise ratio in dB, capped at 120.
#[pyfunction]
#[pyo3(signature = (pred, target, peak = 1.0))]
fn psnr(pred: Vec<f64>, target: Vec<f64>, peak: f64) -> PyResult<f64> {
    same_len(&pred, &target)?;
    Ok(metrics::psnr(&pred, &target, peak))
}

/// Mean SSIM of two `[W][H]` planes with an 11x11 Gaussian window.
#[pyfunction]
#[pyo3(signature = (pred, target, width, height, peak = 1.0))]
fn ssim(pred: Vec<f64>, target: Vec<f64>, width: usize, height: usize, peak: f64) -> PyResult<f64> {
    same_len(&pred, &target)?;
    let params = SsimParams {
        peak,
        ..Default::default()
    };
    metrics::ssim(&pred, &target, width, height, &params).map_err(py_err)
}

/// Intersection over union of one class; 1.0 when both masks lack it.
#[pyfunction]
#[pyo3(signature = (pred, gt, class_id = 1))]
fn iou(pred: Vec<u8>, gt: Vec<u8>, class_id: u8) -> PyResult<f64> {
    if pred.len() != gt.len() {
        return Err(PyValueError::new_err("masks differ in length"));
    }
    Ok(metrics::iou(&pred, &gt, class_id))
}

/// Reads a tensor file into `{"dims", "data", "metadata"}`.
#[pyfunction]
fn read_tensor<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let (t, meta) = py.detach(|| tensor::read_tensor(&path)).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("dims", t.dims().to_vec())?;
    out.set_item("data", t.to_f64())?;
    out.set_item("metadata", json_to_py(py, &meta)?)?;
    Ok(out)
}

/// Writes an f64 tensor; `metadata` is a JSON object string.
#[pyfunction]
#[pyo3(signature = (path, dims, data, metadata = None))]
fn write_tensor(path: PathBuf, dims: Vec<usize>, data: Vec<f64>, metadata: Option<&str>) -> PyResult<()> {
    let meta: Metadata = match metadata {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => Metadata::new(),
    };
    let t = Tensor::f64(dims, data).map_err(py_err)?;
    tensor::write_tensor(&path, &t, &meta).map_err(py_err)
}

/// Gaussian KDE of `samples` as `{"support", "density", "bandwidth"}`.
#[pyfunction]
#[pyo3(signature = (samples, bandwidth = None))]
fn fit_kde<'py>(py: Python<'py>, samples: Vec<f64>, bandwidth: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
    let pdf = fit(&samples, bandwidth).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("support", pdf.support)?;
    out.set_item("density", pdf.density)?;
    out.set_item("bandwidth", pdf.bandwidth)?;
    Ok(out)
}

/// Fits a KDE to `samples` and draws `n` values by inverse-transform sampling.
#[pyfunction]
#[pyo3(signature = (samples, n, seed, bandwidth = None))]
fn sample_kde(samples: Vec<f64>, n: usize, seed: u64, bandwidth: Option<f64>) -> PyResult<Vec<f64>> {
    let pdf = fit(&samples, bandwidth).map_err(py_err)?;
    Ok(sample_pdf(&pdf, &mut Rng::new(seed), n))
}

/// Fully defaulted pipeline config as TOML.
#[pyfunction]
fn default_config(seed: u64) -> PyResult<String> {
    PipelineConfig::with_seed(seed).to_toml().map_err(py_err)
}

/// Generates a dataset and returns its manifest.
#[pyfunction]
#[pyo3(signature = (config, out, workers = None))]
fn make_dataset<'py>(py: Python<'py>, config: PathBuf, out: PathBuf, workers: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
    let manifest = py
        .detach(|| {
            let cfg = PipelineConfig::load(&config)?;
            pipeline::make_dataset(&cfg, &out, workers)
        })
        .map_err(py_err)?;
    json_to_py(py, &manifest)
}

/// One dataset scene as flat `[W][H]` lists.
#[pyfunction]
fn load_scene<'py>(py: Python<'py>, dataset: PathBuf, id: &str) -> PyResult<Bound<'py, PyDict>> {
    let p = pipeline::load_scene(&dataset, id).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("id", p.id)?;
    out.set_item("width", p.clean.width())?;
    out.set_item("height", p.clean.height())?;
    out.set_item("freq_hz", p.clean.freq_hz)?;
    out.set_item("clean_re", p.clean.re)?;
    out.set_item("clean_im", p.clean.im)?;
    out.set_item("noisy_re", p.noisy.re)?;
    out.set_item("noisy_im", p.noisy.im)?;
    out.set_item("mask", p.mask.labels().to_vec())?;
    Ok(out)
}

#[pymodule]
pub fn _sonoseg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(read_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(write_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(fit_kde, m)?)?;
    m.add_function(wrap_pyfunction!(sample_kde, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(make_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_scene, m)?)?;
    Ok(())
}
