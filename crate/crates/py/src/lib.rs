//! Python bindings for `desyr_core`.
//!
//! Labels cross the boundary as ints (1 = claim, 0 = non-claim). Reports
//! and metrics come back as plain dicts.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use desyr_core::checkpoint::Checkpoint as CoreCheckpoint;
use desyr_core::dare::{self, DareConfig, EmbeddingTable as CoreTable};
use desyr_core::data::{self, whitespace_tokens, DatasetSchema, Label, LabeledCorpus, LabeledExample};
use desyr_core::eval::{self, ClusterMetric, KMeansConfig, Metrics};
use desyr_core::ingest::{self, GraphOptions, HierarchyGraph};
use desyr_core::nn::focal_loss as core_focal;
use desyr_core::poincare;
use desyr_core::protocol::{self, RunConfig};

create_exception!(desyr, DesyrError, PyException);

fn err(e: desyr_core::Error) -> PyErr {
    DesyrError::new_err(e.to_string())
}

fn label(i: i64) -> PyResult<Label> {
    match i {
        0 => Ok(Label::NonClaim),
        1 => Ok(Label::Claim),
        other => Err(DesyrError::new_err(format!("label must be 0 or 1, got {other}"))),
    }
}

fn labels(v: &[i64]) -> PyResult<Vec<Label>> {
    v.iter().map(|&i| label(i)).collect()
}

fn metrics_dict<'py>(py: Python<'py>, m: &Metrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("c_f1", m.c_f1)?;
    d.set_item("nc_f1", m.nc_f1)?;
    d.set_item("m_f1", m.m_f1)?;
    d.set_item("w_f1", m.w_f1)?;
    d.set_item("accuracy", m.accuracy())?;
    Ok(d)
}

#[pyfunction]
fn poincare_distance(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    poincare::poincare_distance(&x, &y).map_err(err)
}

/// Euclidean gradients of the distance with respect to both arguments.
#[pyfunction]
fn distance_grad(x: Vec<f64>, y: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    if x.len() != y.len() {
        return Err(DesyrError::new_err("dimension mismatch"));
    }
    poincare::poincare_distance(&x, &y).map_err(err)?;
    Ok(poincare::distance_grad(&x, &y))
}

#[pyfunction]
#[pyo3(signature = (x, eps_ball = poincare::DEFAULT_EPS_BALL))]
fn project_to_ball(x: Vec<f64>, eps_ball: f64) -> PyResult<Vec<f64>> {
    Ok(poincare::project_to_ball(&x, eps_ball).map_err(err)?.into_inner())
}

#[pyfunction]
fn focal_loss(p: Vec<f64>, y: usize, gamma: f64) -> PyResult<f64> {
    if y >= p.len() {
        return Err(DesyrError::new_err("class index out of range"));
    }
    Ok(core_focal(&p, y, gamma))
}

/// `(parent, child)` key pairs for every sentence in a CoNLL-U string.
#[pyfunction]
#[pyo3(signature = (conllu, drop_punct = false))]
fn extract_edges(conllu: &str, drop_punct: bool) -> PyResult<Vec<(String, String)>> {
    let sents = ingest::parse_conllu(conllu).map_err(err)?;
    let g = HierarchyGraph::from_sentences(&sents, GraphOptions { drop_punct, dedupe: false }).map_err(err)?;
    Ok(g.edges.into_iter().map(|e| (e.parent, e.child)).collect())
}

#[pyclass(module = "desyr", skip_from_py_object)]
#[derive(Clone)]
struct EmbeddingTable {
    inner: CoreTable,
}

#[pymethods]
impl EmbeddingTable {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(EmbeddingTable { inner: dare::load_embeddings(&path).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (text, eps_ball = poincare::DEFAULT_EPS_BALL))]
    fn from_text(text: &str, eps_ball: f64) -> PyResult<Self> {
        Ok(EmbeddingTable { inner: CoreTable::from_text(text, eps_ball).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        dare::save_embeddings(&self.inner, &path).map_err(err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, key: &str) -> bool {
        self.inner.contains(key)
    }

    fn keys(&self) -> Vec<String> {
        self.inner.keys().to_vec()
    }

    fn get(&self, key: &str) -> Option<Vec<f64>> {
        self.inner.get(key).map(<[f64]>::to_vec)
    }

    fn distance(&self, a: &str, b: &str) -> PyResult<f64> {
        self.inner.distance(a, b).map_err(err)
    }

    #[pyo3(signature = (key, k = 10))]
    fn nearest(&self, key: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
        dare::nearest(&self.inner, key, k).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("EmbeddingTable(len={}, dim={})", self.inner.len(), self.inner.dim())
    }
}

/// Train hierarchy embeddings on the dependency edges of a CoNLL-U string.
#[pyfunction]
#[pyo3(signature = (conllu, dim = 10, epochs = 50, seed = 0, learning_rate = 0.1, negatives = 10, burn_in_epochs = 10, drop_punct = false))]
#[allow(clippy::too_many_arguments)]
fn train_dare(
    conllu: &str,
    dim: usize,
    epochs: usize,
    seed: u64,
    learning_rate: f64,
    negatives: usize,
    burn_in_epochs: usize,
    drop_punct: bool,
) -> PyResult<EmbeddingTable> {
    let sents = ingest::parse_conllu(conllu).map_err(err)?;
    let g = HierarchyGraph::from_sentences(&sents, GraphOptions { drop_punct, dedupe: false }).map_err(err)?;
    let cfg = DareConfig {
        dim,
        epochs,
        seed,
        learning_rate,
        negatives_per_edge: negatives,
        burn_in_epochs,
        ..Default::default()
    };
    Ok(EmbeddingTable { inner: dare::train_dare(&g, &cfg).map_err(err)? })
}

#[pyfunction]
fn f1_scores<'py>(py: Python<'py>, pred: Vec<i64>, gold: Vec<i64>) -> PyResult<Bound<'py, PyDict>> {
    let m = eval::f1_scores(&labels(&pred)?, &labels(&gold)?).map_err(err)?;
    metrics_dict(py, &m)
}

/// Majority vote over several prediction lists. Ties go to claim.
#[pyfunction]
fn vote(predictions: Vec<Vec<i64>>) -> PyResult<Vec<i64>> {
    let ls: Vec<Vec<Label>> = predictions.iter().map(|p| labels(p)).collect::<PyResult<_>>()?;
    Ok(desyr_core::model::vote(&ls).map_err(err)?.into_iter().map(|l| l.index() as i64).collect())
}

/// Returns `(assignments, centroids, inertia)`.
#[pyfunction]
#[pyo3(signature = (vectors, k = 2, seed = 0, restarts = 10, poincare = false))]
fn kmeans(vectors: Vec<Vec<f64>>, k: usize, seed: u64, restarts: usize, poincare: bool) -> PyResult<(Vec<usize>, Vec<Vec<f64>>, f64)> {
    let cfg = KMeansConfig {
        k,
        seed,
        restarts,
        metric: if poincare { ClusterMetric::Poincare } else { ClusterMetric::Euclidean },
        ..Default::default()
    };
    let r = eval::kmeans_cluster(&vectors, &cfg).map_err(err)?;
    let inertia = r.inertia();
    Ok((r.assignments, r.centroids, inertia))
}

#[pyclass(module = "desyr")]
struct Checkpoint {
    inner: CoreCheckpoint,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Checkpoint { inner: CoreCheckpoint::load(&path).map_err(err)? })
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn split(&self) -> usize {
        self.inner.split
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.params.values().map(|t| t.data.len()).sum()
    }

    /// Classify whitespace-tokenized texts. Returns `(label, prob_claim)`.
    fn predict_texts(&self, table: &EmbeddingTable, texts: Vec<String>) -> PyResult<Vec<(i64, f64)>> {
        let corpus = LabeledCorpus::new(
            texts
                .into_iter()
                .enumerate()
                .map(|(i, text)| LabeledExample {
                    id: i.to_string(),
                    tokens: whitespace_tokens(&text),
                    text,
                    label: Label::NonClaim,
                })
                .collect(),
        );
        self.run(table, &corpus)
    }

    /// Classify a dataset file with its schema and optional CoNLL-U companion.
    #[pyo3(signature = (table, dataset, schema, companion = None))]
    fn predict_dataset(&self, table: &EmbeddingTable, dataset: PathBuf, schema: PathBuf, companion: Option<PathBuf>) -> PyResult<Vec<(String, i64, f64)>> {
        let schema = DatasetSchema::from_json_file(&schema).map_err(err)?;
        let corpus = data::load_dataset(&dataset, &schema, companion.as_deref()).map_err(err)?;
        let preds = protocol::predict_with_checkpoint(&self.inner, &table.inner, &corpus).map_err(err)?;
        Ok(preds.into_iter().map(|p| (p.id, p.label.index() as i64, p.prob_claim)).collect())
    }
}

impl Checkpoint {
    fn run(&self, table: &EmbeddingTable, corpus: &LabeledCorpus) -> PyResult<Vec<(i64, f64)>> {
        let preds = protocol::predict_with_checkpoint(&self.inner, &table.inner, corpus).map_err(err)?;
        Ok(preds.into_iter().map(|p| (p.label.index() as i64, p.prob_claim)).collect())
    }
}

/// Run the full training protocol from a config file. Returns the report as JSON text.
#[pyfunction]
#[pyo3(signature = (config, run_dir, epochs = None, seed = None))]
fn train(config: PathBuf, run_dir: PathBuf, epochs: Option<usize>, seed: Option<u64>) -> PyResult<String> {
    let mut cfg = RunConfig::load(&config).map_err(err)?;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = protocol::run(&cfg, &run_dir).map_err(err)?;
    serde_json::to_string(&report).map_err(|e| DesyrError::new_err(e.to_string()))
}

/// Re-derive a run directory's report. Returns it as JSON text.
#[pyfunction]
fn report(run_dir: PathBuf) -> PyResult<String> {
    let r = eval::report(&run_dir).map_err(err)?;
    serde_json::to_string(&r).map_err(|e| DesyrError::new_err(e.to_string()))
}

/// Write the bundled toy corpus, its parses, schema and config into `dir`.
#[pyfunction]
fn make_toy(dir: PathBuf) -> PyResult<()> {
    desyr_core::toy::write_toy(&dir).map_err(err)
}

#[pymodule]
fn desyr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DesyrError", m.py().get_type::<DesyrError>())?;
    m.add_class::<EmbeddingTable>()?;
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(poincare_distance, m)?)?;
    m.add_function(wrap_pyfunction!(distance_grad, m)?)?;
    m.add_function(wrap_pyfunction!(project_to_ball, m)?)?;
    m.add_function(wrap_pyfunction!(focal_loss, m)?)?;
    m.add_function(wrap_pyfunction!(extract_edges, m)?)?;
    m.add_function(wrap_pyfunction!(train_dare, m)?)?;
    m.add_function(wrap_pyfunction!(f1_scores, m)?)?;
    m.add_function(wrap_pyfunction!(vote, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(make_toy, m)?)?;
    Ok(())
}
