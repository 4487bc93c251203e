//! Python bindings: configuration, pipeline stages, clustering and metrics.

use std::path::PathBuf;

use asd_core::cli::{self, EmbedSource, FinetuneArm, Workspace};
use asd_core::config::PipelineConfig;
use asd_core::metrics::{self, ScoreReport};
use asd_core::pseudolabel::{self, Dendrogram};
use asd_core::{corpus, Error};
use ndarray::Array2;
use pyo3::exceptions::{PyFileNotFoundError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::MissingArtifact { .. } => PyFileNotFoundError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Pipeline configuration.
#[pyclass(name = "Config", module = "asdkit", frozen)]
struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    /// Parse TOML text with optional `a.b=value` overrides.
    #[staticmethod]
    #[pyo3(signature = (text, overrides = None))]
    fn from_toml(text: &str, overrides: Option<Vec<String>>) -> PyResult<Self> {
        let inner = PipelineConfig::from_toml_str(text, &overrides.unwrap_or_default()).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Load a TOML file (or the defaults when `path` is None).
    #[staticmethod]
    #[pyo3(signature = (path = None, overrides = None))]
    fn load(path: Option<PathBuf>, overrides: Option<Vec<String>>) -> PyResult<Self> {
        let inner = PipelineConfig::load(path.as_deref(), &overrides.unwrap_or_default()).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.output_dir.clone()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }
}

/// Per-machine metrics and subset scores.
#[pyclass(name = "Report", module = "asdkit", frozen)]
struct PyReport {
    inner: ScoreReport,
}

#[pymethods]
impl PyReport {
    /// `(machine, auc_source, auc_target, pauc)` tuples.
    #[getter]
    fn machines(&self) -> Vec<(String, f64, f64, f64)> {
        self.inner
            .machines
            .iter()
            .map(|m| (m.machine_type.clone(), m.auc_source, m.auc_target, m.pauc))
            .collect()
    }

    /// Official score per subset, in percent.
    #[getter]
    fn subsets(&self) -> Vec<(String, f64)> {
        self.inner.subsets.clone()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }
}

/// Ward merge history over a set of points.
#[pyclass(name = "Dendrogram", module = "asdkit", frozen)]
struct PyDendrogram {
    inner: Dendrogram,
}

#[pymethods]
impl PyDendrogram {
    /// `(id_a, id_b, cost, new_id, size)` per merge.
    #[getter]
    fn merges(&self) -> Vec<(usize, usize, f64, usize, usize)> {
        self.inner
            .merges
            .iter()
            .map(|m| (m.id_a, m.id_b, m.cost, m.new_id, m.new_size))
            .collect()
    }

    /// Flat labels for `k` clusters.
    fn cut(&self, k: usize) -> PyResult<Vec<usize>> {
        pseudolabel::cut(&self.inner, k).map_err(py_err)
    }
}

fn workspace(config: &PyConfig) -> PyResult<Workspace> {
    Workspace::new(config.inner.clone()).map_err(py_err)
}

fn rows_to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Ward agglomeration of the given rows.
#[pyfunction]
fn ward(rows: Vec<Vec<f64>>) -> PyResult<PyDendrogram> {
    let x = rows_to_array(rows)?;
    let inner = pseudolabel::agglomerate(&x.view()).map_err(py_err)?;
    Ok(PyDendrogram { inner })
}

#[pyfunction]
fn auc(normal: Vec<f64>, anomaly: Vec<f64>) -> PyResult<f64> {
    metrics::auc(&normal, &anomaly).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (normal, anomaly, p = metrics::DEFAULT_P))]
fn pauc(normal: Vec<f64>, anomaly: Vec<f64>, p: f64) -> PyResult<f64> {
    metrics::pauc(&normal, &anomaly, p).map_err(py_err)
}

#[pyfunction]
fn harmonic_mean(values: Vec<f64>) -> PyResult<f64> {
    metrics::harmonic_mean(&values).map_err(py_err)
}

/// Writes the synthetic corpus; returns the number of clips.
#[pyfunction]
fn synth(config: &PyConfig) -> PyResult<usize> {
    let ws = workspace(config)?;
    Ok(cli::run_synth(&ws).map_err(py_err)?.manifest.clips.len())
}

/// Pre-training; returns the per-step L_UFO values.
#[pyfunction]
fn pretrain(config: &PyConfig) -> PyResult<Vec<f64>> {
    let ws = workspace(config)?;
    let out = cli::run_pretrain(&ws).map_err(py_err)?;
    Ok(out.curve.iter().map(|r| r.loss.total).collect())
}

/// Embeds every clip with `source` in {"teacher", "untrained", "adapted"}.
#[pyfunction]
#[pyo3(signature = (config, source = "teacher"))]
fn embed(config: &PyConfig, source: &str) -> PyResult<Vec<(String, Vec<f64>)>> {
    let source = match source {
        "teacher" => EmbedSource::Teacher,
        "untrained" => EmbedSource::Untrained,
        "adapted" => EmbedSource::Adapted,
        other => return Err(PyValueError::new_err(format!("unknown embedding source {other:?}"))),
    };
    let ws = workspace(config)?;
    let rows = cli::run_embed(&ws, source).map_err(py_err)?;
    Ok(rows.into_iter().map(|(k, v)| (k, v.to_vec())).collect())
}

/// Pseudo-labels unattributed machines; returns `(machine, k, purity)`.
#[pyfunction]
fn cluster(config: &PyConfig) -> PyResult<Vec<(String, usize, Option<f64>)>> {
    let ws = workspace(config)?;
    Ok(cli::run_cluster(&ws).map_err(py_err)?.summary)
}

/// Fine-tuning; returns the per-step training loss.
#[pyfunction]
#[pyo3(signature = (config, no_pseudo = false, from_scratch = false))]
fn finetune(config: &PyConfig, no_pseudo: bool, from_scratch: bool) -> PyResult<Vec<f64>> {
    let ws = workspace(config)?;
    let out = cli::run_finetune(&ws, FinetuneArm { no_pseudo, from_scratch }).map_err(py_err)?;
    Ok(out.curve.iter().map(|r| r.loss).collect())
}

#[pyfunction]
fn score(config: &PyConfig) -> PyResult<Vec<(String, f64)>> {
    let ws = workspace(config)?;
    cli::run_score(&ws).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (config, force = false))]
fn evaluate(config: &PyConfig, force: bool) -> PyResult<PyReport> {
    let ws = workspace(config)?;
    Ok(PyReport {
        inner: cli::run_eval(&ws, force).map_err(py_err)?,
    })
}

/// Every stage in order; synthesises the corpus first if it is missing.
#[pyfunction]
fn pipeline(config: &PyConfig) -> PyResult<PyReport> {
    let ws = workspace(config)?;
    Ok(PyReport {
        inner: cli::run_pipeline(&ws).map_err(py_err)?,
    })
}

/// `(path, machine, split, domain, condition, attribute)`
type ClipRow = (String, String, String, String, String, Option<String>);

/// Parses a dataset tree into one row per clip.
#[pyfunction]
fn scan_dataset(root: PathBuf) -> PyResult<Vec<ClipRow>> {
    let m = corpus::scan_dataset(&root).map_err(py_err)?;
    Ok(m.clips
        .iter()
        .map(|c| {
            (
                c.key(),
                c.machine_type.clone(),
                c.split.as_str().to_string(),
                c.domain.to_string(),
                c.condition.to_string(),
                c.attribute.clone(),
            )
        })
        .collect())
}

#[pymodule]
fn asdkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyDendrogram>()?;
    m.add_function(wrap_pyfunction!(ward, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(pauc, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_mean, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(finetune, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(scan_dataset, m)?)?;
    Ok(())
}
