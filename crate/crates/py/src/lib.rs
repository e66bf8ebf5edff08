//! Python bindings. Structured results (reports, bound specs) cross the
//! boundary as plain dicts; configs go in as JSON strings laid over the
//! defaults.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use segan::bounds::{bound_report as core_bound_report, BoundSpec, CoverVariant};
use segan::datagen::{DatasetConfig, DomainDataset};
use segan::metrics::{confusion, iou_report, stability_index as core_stability, DEFAULT_WINDOW_FRACTION};
use segan::networks::{load_checkpoint, save_checkpoint, ModelBundle, Segmenter};
use segan::trainer::{run_ablation, target_confusion, AblationMode, StyleSource, TrainConfig};

fn py_err(e: segan::Error) -> PyErr {
    use segan::Error as E;
    match e {
        E::NumericAbort { .. } | E::NonFinite(_) => PyArithmeticError::new_err(e.to_string()),
        E::Io(_) | E::Format(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// `default` with the keys of the JSON object `patch` replaced.
fn config<T: Serialize + DeserializeOwned>(default: T, patch: Option<&str>) -> PyResult<T> {
    let Some(patch) = patch else { return Ok(default) };
    let bad = |e: serde_json::Error| PyValueError::new_err(format!("config: {e}"));
    let patch: serde_json::Value = serde_json::from_str(patch).map_err(bad)?;
    let mut base = serde_json::to_value(default).map_err(bad)?;
    match (base.as_object_mut(), patch) {
        (Some(b), serde_json::Value::Object(p)) => b.extend(p),
        _ => return Err(PyValueError::new_err("config must be a JSON object")),
    }
    serde_json::from_value(base).map_err(bad)
}

/// Generates the synthetic benchmark into `out_dir`; returns its shift severity.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=0, config_json=None))]
fn generate_dataset<'py>(py: Python<'py>, out_dir: PathBuf, seed: u64, config_json: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: DatasetConfig = config(DatasetConfig::default(), config_json)?;
    let ds = cfg.generate(seed).map_err(py_err)?;
    ds.save(&out_dir).map_err(py_err)?;
    to_py(py, &ds.severity().map_err(py_err)?)
}

/// Dataset summary: sizes, classes and shift severity.
#[pyfunction]
fn dataset_info<'py>(py: Python<'py>, data_dir: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let ds = DomainDataset::load(&data_dir).map_err(py_err)?;
    let sev = ds.severity().map_err(py_err)?;
    to_py(
        py,
        &serde_json::json!({
            "height": ds.height(),
            "width": ds.width(),
            "classes": ds.classes(),
            "n_source": ds.n_source(),
            "n_target": ds.n_target(),
            "seed": ds.manifest.seed,
            "severity": sev,
        }),
    )
}

/// Trains one ablation mode; writes the final bundle to `checkpoint` when
/// given and returns the target report with the evaluation curve.
#[pyfunction]
#[pyo3(signature = (data_dir, mode, config_json=None, oracle_style=false, checkpoint=None))]
fn train<'py>(
    py: Python<'py>,
    data_dir: PathBuf,
    mode: &str,
    config_json: Option<&str>,
    oracle_style: bool,
    checkpoint: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let mode: AblationMode = mode.parse().map_err(py_err)?;
    let cfg: TrainConfig = config(TrainConfig::default(), config_json)?;
    let r = py
        .detach(|| -> segan::Result<_> {
            let ds = DomainDataset::load(&data_dir)?;
            let style = if oracle_style { StyleSource::oracle_for(&ds) } else { StyleSource::None };
            let r = run_ablation(mode, &cfg, &ds, &style, None)?;
            if let Some(p) = &checkpoint {
                save_checkpoint(p, &r.bundle.to_checkpoint(cfg.seed, cfg.maxiter)?)?;
            }
            Ok(r)
        })
        .map_err(py_err)?;
    let curve = r.log.miou_curve();
    to_py(
        py,
        &serde_json::json!({
            "mode": mode.name(),
            "metrics": r.report,
            "miou_curve": curve,
            "stability": core_stability(&curve, DEFAULT_WINDOW_FRACTION).ok(),
        }),
    )
}

/// Scores a checkpoint on the labelled target images.
#[pyfunction]
#[pyo3(signature = (checkpoint, data_dir, mst=None, subset=None))]
fn evaluate<'py>(
    py: Python<'py>,
    checkpoint: PathBuf,
    data_dir: PathBuf,
    mst: Option<Vec<f64>>,
    subset: Option<Vec<usize>>,
) -> PyResult<Bound<'py, PyAny>> {
    let report = py
        .detach(|| -> segan::Result<_> {
            let bundle = ModelBundle::from_checkpoint(&load_checkpoint(&checkpoint)?)?;
            let ds = DomainDataset::load(&data_dir)?;
            let mut seg = Segmenter::new(&bundle.segnet)?;
            let cm = target_confusion(&mut seg, bundle.eval_params(), &ds, 0, mst.as_deref())?;
            iou_report(&cm, subset.as_deref())
        })
        .map_err(py_err)?;
    to_py(py, &report)
}

/// Per-class IoU and mIoU of flat label maps.
#[pyfunction]
#[pyo3(signature = (pred, gt, classes, subset=None))]
fn iou<'py>(py: Python<'py>, pred: Vec<u8>, gt: Vec<u8>, classes: usize, subset: Option<Vec<usize>>) -> PyResult<Bound<'py, PyAny>> {
    let cm = confusion(&pred, &gt, classes).map_err(py_err)?;
    to_py(py, &iou_report(&cm, subset.as_deref()).map_err(py_err)?)
}

/// Tail standard deviation of an mIoU curve.
#[pyfunction]
#[pyo3(signature = (curve, window_fraction=DEFAULT_WINDOW_FRACTION))]
fn stability_index(curve: Vec<f64>, window_fraction: f64) -> PyResult<f64> {
    core_stability(&curve, window_fraction).map_err(py_err)
}

/// Covering, Rademacher and generalization bounds for a spec given as a
/// dict-shaped JSON string (keys `s`, `b`, `rho`, `w`, `x_norm`, `epsilon`,
/// `n`, `delta_bound`, `delta`, `phi`). `variant` is `statement` or
/// `proof-final-line`.
#[pyfunction]
#[pyo3(signature = (spec_json, variant="statement"))]
fn bound_report<'py>(py: Python<'py>, spec_json: &str, variant: &str) -> PyResult<Bound<'py, PyAny>> {
    let spec: BoundSpec = config(BoundSpec::unit(), Some(spec_json))?;
    let variant: CoverVariant = serde_json::from_value(serde_json::Value::String(variant.into()))
        .map_err(|_| PyValueError::new_err(format!("unknown variant `{variant}`")))?;
    to_py(py, &core_bound_report(&spec, variant).map_err(py_err)?)
}

#[pymodule]
fn segan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_info, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(stability_index, m)?)?;
    m.add_function(wrap_pyfunction!(bound_report, m)?)?;
    Ok(())
}
