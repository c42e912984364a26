//! Python bindings for `fnrcal`.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fnrcal::harness::{self, ExperimentPlan};
use fnrcal::{AggregateMetrics, CalibrationResult, Strategy, StrategyKind};

fn to_py(e: fnrcal::Error) -> PyErr {
    match e {
        fnrcal::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(frozen, from_py_object, name = "Box3", module = "fnrcal_py")]
#[derive(Clone, Copy)]
struct PyBox3(fnrcal::Box3);

#[pymethods]
impl PyBox3 {
    /// Axis-aligned box from two opposite corners in any order.
    #[new]
    fn new(a: [f64; 3], b: [f64; 3]) -> PyResult<Self> {
        fnrcal::Box3::from_corners(a, b).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn cube(center: [f64; 3], size: f64) -> PyResult<Self> {
        fnrcal::Box3::cube(center, size).map(Self).map_err(to_py)
    }

    #[getter]
    fn min(&self) -> [f64; 3] {
        self.0.min()
    }

    #[getter]
    fn max(&self) -> [f64; 3] {
        self.0.max()
    }

    fn volume(&self) -> f64 {
        self.0.volume()
    }

    fn iou(&self, other: PyRef<'_, PyBox3>) -> f64 {
        fnrcal::iou(&self.0, &other.0)
    }

    fn __repr__(&self) -> String {
        format!("Box3(min={:?}, max={:?})", self.0.min(), self.0.max())
    }
}

#[pyfunction]
fn iou(a: PyRef<'_, PyBox3>, b: PyRef<'_, PyBox3>) -> f64 {
    fnrcal::iou(&a.0, &b.0)
}

/// Greedy NMS over `(box, confidence)` pairs; returns the kept pairs by
/// descending confidence.
#[pyfunction]
#[pyo3(signature = (candidates, iou_threshold = fnrcal::geometry::DEFAULT_NMS_THRESHOLD))]
fn nms_filter(candidates: Vec<(PyRef<'_, PyBox3>, f64)>, iou_threshold: f64) -> Vec<(PyBox3, f64)> {
    let boxes: Vec<fnrcal::CandidateBox> = candidates
        .iter()
        .map(|(b, c)| fnrcal::CandidateBox::new(b.0, *c))
        .collect();
    fnrcal::nms_filter(&boxes, iou_threshold)
        .into_iter()
        .map(|c| (PyBox3(c.bbox), c.confidence))
        .collect()
}

#[pyclass(frozen, name = "Dataset", module = "fnrcal_py")]
struct PyDataset(fnrcal::Dataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        fnrcal::load_dataset(path).map(Self).map_err(to_py)
    }

    /// Synthetic dataset; `config` is an optional TOML generator config that
    /// the keyword arguments override.
    #[staticmethod]
    #[pyo3(signature = (n_scans = None, seed = None, config = None))]
    fn generate(py: Python<'_>, n_scans: Option<usize>, seed: Option<u64>, config: Option<&str>) -> PyResult<Self> {
        let mut cfg: fnrcal::GeneratorConfig = match config {
            Some(text) => toml::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => Default::default(),
        };
        if let Some(n) = n_scans {
            cfg.n_scans = n;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        py.detach(|| fnrcal::generate(&cfg)).map(Self).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        fnrcal::save_dataset(&self.0, path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn nodule_count(&self) -> usize {
        self.0.nodule_count()
    }

    #[getter]
    fn scan_ids(&self) -> Vec<String> {
        self.0.scans.iter().map(|s| s.scan_id.clone()).collect()
    }

    fn filter_consensus(&self, min_consensus: u8) -> PyResult<Self> {
        fnrcal::filter_consensus(&self.0, min_consensus)
            .map(|f| Self(f.dataset))
            .map_err(to_py)
    }

    /// `(calibration, test)` halves; calibration gets the odd scan.
    fn split(&self, seed: u64) -> PyResult<(Self, Self)> {
        fnrcal::split_dataset(&self.0, seed)
            .map(|(a, b)| (Self(a), Self(b)))
            .map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Dataset({} scans, {} nodules)", self.0.len(), self.0.nodule_count())
    }
}

fn strategy(kind: &str, alpha: f64, target: f64, fixed_lambda: f64) -> PyResult<Strategy> {
    let kind: StrategyKind = kind.parse().map_err(to_py)?;
    Ok(match kind {
        StrategyKind::Naive => Strategy::Naive { fixed_lambda },
        StrategyKind::Froc => Strategy::Froc { target_sensitivity: target },
        StrategyKind::Crc => Strategy::Crc { alpha },
    })
}

fn result_dict<'py>(py: Python<'py>, r: &CalibrationResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("strategy", r.strategy.as_str())?;
    d.set_item("lambda_hat", r.lambda_hat)?;
    d.set_item("alpha", r.alpha)?;
    d.set_item("target_sensitivity", r.target_sensitivity)?;
    d.set_item("n", r.n)?;
    d.set_item("achieved_calibration_risk", r.achieved_calibration_risk)?;
    d.set_item("flag", r.flag.map(|f| f.as_str()))?;
    Ok(d)
}

fn metrics_dict<'py>(py: Python<'py>, m: &AggregateMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("sensitivity_froc", m.sensitivity_froc)?;
    d.set_item("sensitivity_prc", m.sensitivity_prc)?;
    d.set_item("precision_prc", m.precision_prc)?;
    d.set_item("false_positives_froc", m.false_positives_froc)?;
    d.set_item("efficiency", m.efficiency)?;
    d.set_item("fn_per_scan", m.fn_per_scan)?;
    d.set_item("empty_prediction_sets", m.empty_prediction_sets)?;
    Ok(d)
}

/// Chooses λ̂ on `dataset` with `strategy` in {"naive", "froc", "crc"}.
#[pyfunction]
#[pyo3(signature = (dataset, strategy = "crc", alpha = 0.1, target_sensitivity = 0.9, fixed_lambda = 0.5))]
fn calibrate<'py>(
    py: Python<'py>,
    dataset: PyRef<'py, PyDataset>,
    strategy: &str,
    alpha: f64,
    target_sensitivity: f64,
    fixed_lambda: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let s = self::strategy(strategy, alpha, target_sensitivity, fixed_lambda)?;
    let r = s.calibrate(&dataset.0).map_err(to_py)?;
    result_dict(py, &r)
}

/// Metrics of the prediction sets at `lambda_hat` on `dataset`.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, dataset: PyRef<'py, PyDataset>, lambda_hat: f64) -> PyResult<Bound<'py, PyDict>> {
    if !(0.0..=fnrcal::LAMBDA_SENTINEL).contains(&lambda_hat) {
        return Err(PyValueError::new_err(format!("lambda_hat {lambda_hat} outside [0, 1]")));
    }
    metrics_dict(py, &fnrcal::aggregate_metrics(&dataset.0, lambda_hat))
}

/// `(grid, empirical_risk)` of the mean per-scan FNR.
#[pyfunction]
fn risk_curve(dataset: PyRef<'_, PyDataset>) -> (Vec<f64>, Vec<f64>) {
    let c = fnrcal::risk_curve(&dataset.0);
    (c.grid, c.empirical_risk)
}

/// Runs a TOML plan file and returns one dict per (dataset, strategy).
#[pyfunction]
#[pyo3(signature = (plan, output_dir = None, repetitions = None, base_seed = None, workers = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    plan: PathBuf,
    output_dir: Option<PathBuf>,
    repetitions: Option<usize>,
    base_seed: Option<u64>,
    workers: Option<usize>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut p = ExperimentPlan::from_file(&plan).map_err(to_py)?;
    if let Some(o) = output_dir {
        p.output_dir = o;
    }
    if let Some(r) = repetitions {
        p.repetitions = r;
    }
    if let Some(s) = base_seed {
        p.base_seed = s;
    }
    if let Some(w) = workers {
        p.workers = w;
    }
    let summary = py.detach(|| harness::run_experiment(&p)).map_err(to_py)?;
    summary
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("dataset", &r.dataset)?;
            d.set_item("strategy", r.strategy.as_str())?;
            d.set_item("trials", r.trials)?;
            d.set_item("failures", r.failures)?;
            d.set_item("lambda_hat", r.lambda_hat)?;
            d.set_item("sensitivity", r.sensitivity)?;
            d.set_item("precision", r.precision)?;
            d.set_item("efficiency", r.efficiency)?;
            d.set_item("fn", r.fn_per_scan)?;
            d.set_item("fp", r.fp_per_scan)?;
            d.set_item("infeasible_rate", r.infeasible_rate)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn fnrcal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBox3>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(nms_filter, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(risk_curve, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("LAMBDA_SENTINEL", fnrcal::LAMBDA_SENTINEL)?;
    Ok(())
}
