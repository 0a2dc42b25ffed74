//! Python bindings: theory formulas, eigen-rescaled products, SBM graphs and training runs.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cmp_core::experiment::{self, ExperimentConfig, RunOptions};
use cmp_core::graph::{self, SbmConfig};
use cmp_core::nn::{ModelSpec, Variant};
use cmp_core::theory::{self, TheoryParams};
use cmp_core::train::{self, TrainConfig};
use cmp_core::{Error, Tape, Tensor};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Diverged { .. } | Error::NonFiniteGradient { .. } | Error::EigNoConvergence { .. } | Error::Io { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Tensor::matrix(n, m, rows.into_iter().flatten().collect()).map_err(to_py)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// Information gains of one parameter point as a dict.
#[pyfunction]
#[pyo3(signature = (s, r, d, n=1000, c=10, alpha=20.0))]
fn info_gains<'py>(py: Python<'py>, s: f64, r: f64, d: f64, n: usize, c: usize, alpha: f64) -> PyResult<Bound<'py, PyDict>> {
    let g = theory::info_gains(&TheoryParams::new(n, c, s, r, d, alpha)).map_err(to_py)?;
    let out = PyDict::new(py);
    for (k, v) in [
        ("h_plus", g.h_plus),
        ("h_minus", g.h_minus),
        ("dh_pos", g.dh_pos),
        ("dh_neg", g.dh_neg),
        ("f_pos", g.f_pos),
        ("f_neg", g.f_neg),
        ("ig_pos", g.ig_pos),
        ("ig_neg", g.ig_neg),
        ("r_neg", g.r_neg),
    ] {
        out.set_item(k, v)?;
    }
    Ok(out)
}

/// Ascending eigenvalues and eigenvector columns of a symmetric matrix.
#[pyfunction]
fn symmetric_eig(w: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let e = cmp_core::tensor::symmetric_eig(&matrix(w)?).map_err(to_py)?;
    Ok((e.values, rows(&e.vectors)))
}

/// `Q·diag(λ̂)·Qᵀ·z` for the symmetrized `w`, with negative eigenvalues scaled by `tau`.
#[pyfunction]
fn eig_rescaled_apply(w: Vec<Vec<f64>>, z: Vec<f64>, tau: f64) -> PyResult<Vec<f64>> {
    let mut tape = Tape::new();
    let w = tape.constant(matrix(w)?);
    let z = tape.constant(Tensor::vector(z));
    let t = tape.constant(Tensor::scalar(tau));
    let out = tape.eig_rescaled_apply(w, z, t).map_err(to_py)?;
    Ok(tape.value(out).data().to_vec())
}

/// A node-classification graph with positive and (optionally) negative edges.
#[pyclass(name = "Graph", module = "cmpnet")]
struct PyGraph {
    inner: graph::Graph,
}

#[pymethods]
impl PyGraph {
    /// Planted-partition graph with sampled negative edges.
    #[staticmethod]
    #[pyo3(signature = (n=1000, num_classes=10, p_in=0.25, p_out=0.05, feat_dim=32, seed=42))]
    fn sbm(n: usize, num_classes: usize, p_in: f64, p_out: f64, feat_dim: usize, seed: u64) -> PyResult<Self> {
        let cfg = SbmConfig { n, c: num_classes, p_in, p_out, feat_dim, seed };
        let g = graph::generate_sbm(&cfg).map_err(to_py)?;
        let inner = graph::sample_negative_edges(g, None, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Reads an edge list and headerless feature / label CSVs; negatives are sampled with `seed`.
    #[staticmethod]
    #[pyo3(signature = (edges, features, labels, seed=42))]
    fn load(edges: PathBuf, features: PathBuf, labels: PathBuf, seed: u64) -> PyResult<Self> {
        let g = graph::load_graph(&edges, &features, &labels).map_err(to_py)?;
        let inner = graph::sample_negative_edges(g, None, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.features)
    }

    /// Undirected positive edges `(u, v)` with `u < v`.
    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.undirected_pos()
    }

    #[getter]
    fn negative_edges(&self) -> Vec<(usize, usize)> {
        self.inner.undirected_neg()
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = graph::compute_stats(&self.inner).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("num_nodes", s.num_nodes)?;
        out.set_item("num_edges", s.num_edges)?;
        out.set_item("homophily_ratio", s.homophily_ratio)?;
        out.set_item("density", s.density)?;
        out.set_item("avg_degree", s.avg_degree)?;
        out.set_item("clustering_coef", s.clustering_coef)?;
        out.set_item("modularity", s.modularity)?;
        out.set_item("intra_inter_ratio", s.intra_inter_ratio)?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(num_nodes={}, num_classes={}, edges={}, negative_edges={})",
            self.inner.num_nodes,
            self.inner.num_classes,
            self.inner.pos_edges.len() / 2,
            self.inner.neg_edges.len() / 2
        )
    }
}

/// Trains one model on `graph` and returns its run metrics as a dict.
#[pyfunction]
#[pyo3(signature = (graph, model="sage_cmp", label_rate=0.01, seed=42, hidden_dim=64, max_epochs=200, patience=100, lr=0.01))]
#[allow(clippy::too_many_arguments)]
fn train_model<'py>(
    py: Python<'py>,
    graph: &PyGraph,
    model: &str,
    label_rate: f64,
    seed: u64,
    hidden_dim: usize,
    max_epochs: usize,
    patience: usize,
    lr: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let g = &graph.inner;
    let variant: Variant = model.parse().map_err(to_py)?;
    let spec = ModelSpec { hidden_dim, ..ModelSpec::new(g.feature_dim(), g.num_classes, variant) };
    let cfg = TrainConfig { max_epochs, patience: patience.min(max_epochs), lr, seeds: vec![seed], ..TrainConfig::default() };
    let split = graph::make_split(g, label_rate, seed).map_err(to_py)?;
    let (m, _) = train::train(&spec, g, &split, &cfg, seed).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("model", m.model.to_string())?;
    out.set_item("seed", m.seed)?;
    out.set_item("label_rate", m.label_rate)?;
    out.set_item("epochs_run", m.epochs_run)?;
    out.set_item("best_val_epoch", m.best_val_epoch)?;
    out.set_item("best_val_acc", m.best_val_acc)?;
    out.set_item("test_accuracy", m.test_accuracy)?;
    out.set_item("val_acc", m.curves.iter().map(|c| c.val_acc).collect::<Vec<_>>())?;
    out.set_item("train_loss", m.curves.iter().map(|c| c.train_loss).collect::<Vec<_>>())?;
    Ok(out)
}

/// Runs `train`, `sweep-labels` or `sweep-heterophily` from a JSON config and
/// returns the summary CSV. Files are written when `out` is given.
#[pyfunction]
#[pyo3(signature = (command, config="{}", out=None))]
fn run_experiment(py: Python<'_>, command: &str, config: &str, out: Option<PathBuf>) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config).map_err(to_py)?;
    let opts = RunOptions { out, dump_embeddings: false };
    let outcome = py
        .detach(|| match command {
            "train" => experiment::run_train(&cfg, &opts),
            "sweep-labels" => experiment::run_label_sweep(&cfg, &opts),
            "sweep-heterophily" => experiment::run_heterophily_sweep(&cfg, &opts),
            other => Err(Error::Config(format!("unknown command {other:?}"))),
        })
        .map_err(to_py)?;
    if let Some(f) = outcome.failures.first() {
        return Err(PyRuntimeError::new_err(format!("{} run(s) failed; first: {}", outcome.failures.len(), f.error)));
    }
    Ok(outcome.summary_csv())
}

#[pymodule]
fn cmpnet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_function(wrap_pyfunction!(info_gains, m)?)?;
    m.add_function(wrap_pyfunction!(symmetric_eig, m)?)?;
    m.add_function(wrap_pyfunction!(eig_rescaled_apply, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
