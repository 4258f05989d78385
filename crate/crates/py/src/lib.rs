//! Python bindings: synthetic tasks, exact pursuit, training, inference,
//! interventions and the elastic-net path.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use vip_core::baselines::{elastic_net_path as core_elastic_net_path, ElasticNetConfig};
use vip_core::concept::{AnswerMatrix, LabeledDataset, MatrixManifest, Split};
use vip_core::engine::{self, Checkpoint, CheckpointMeta, Intervention, MlpConfig, TrainConfig};
use vip_core::exact::{self, Binning, DiscreteHistory, DiscreteTaskModel, SignRow, SyntheticTaskConfig, TaskModel};
use vip_core::trajectory::{RowSource, StopReason, StopRule, TrajectoryRecord};

fn py_err(e: vip_core::Error) -> PyErr {
    match e {
        vip_core::Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn rule(threshold: f64, budget: Option<usize>, n_queries: usize) -> PyResult<StopRule> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(PyValueError::new_err(format!("threshold {threshold} outside (0, 1]")));
    }
    let budget = budget.unwrap_or(n_queries);
    if budget == 0 || budget > n_queries {
        return Err(PyValueError::new_err(format!("budget {budget} outside [1, {n_queries}]")));
    }
    Ok(StopRule::new(threshold, budget))
}

/// One query-answer chain with its posteriors.
#[pyclass(name = "Trajectory", module = "vip_py", skip_from_py_object, frozen)]
#[derive(Clone)]
struct PyTrajectory {
    inner: TrajectoryRecord,
}

#[pymethods]
impl PyTrajectory {
    /// `(query, answer, posterior)` per step.
    #[getter]
    fn steps(&self) -> Vec<(usize, f64, Vec<f64>)> {
        self.inner
            .steps
            .iter()
            .map(|s| (s.query, s.answer, s.posterior.clone()))
            .collect()
    }

    #[getter]
    fn queries(&self) -> Vec<usize> {
        self.inner.queries()
    }

    #[getter]
    fn prediction(&self) -> usize {
        self.inner.prediction
    }

    #[getter]
    fn stop_reason(&self) -> &'static str {
        match self.inner.stop_reason {
            StopReason::Threshold => "threshold",
            StopReason::Budget => "budget",
        }
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyTrajectory { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Trajectory(queries={:?}, prediction={}, stop_reason='{}')",
            self.inner.queries(),
            self.inner.prediction,
            self.stop_reason()
        )
    }
}

/// Answers and labels for one split.
#[pyclass(name = "Dataset", module = "vip_py", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: LabeledDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (answers, labels, class_names))]
    fn new(answers: Vec<Vec<f64>>, labels: Vec<usize>, class_names: Vec<String>) -> PyResult<Self> {
        let n = answers.len();
        let q = answers.first().map_or(0, Vec::len);
        if answers.iter().any(|r| r.len() != q) {
            return Err(PyValueError::new_err("answer rows have different lengths"));
        }
        let matrix = AnswerMatrix::new(n, q, answers.concat()).map_err(py_err)?;
        let inner = LabeledDataset::new(Split::Test, labels, class_names, matrix).map_err(py_err)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        let (inner, _) = LabeledDataset::load_dir(dir).map_err(py_err)?;
        Ok(PyDataset { inner })
    }

    fn save(&self, dir: &str, dataset: &str, query_set: &str) -> PyResult<()> {
        let manifest = MatrixManifest {
            dataset: dataset.to_string(),
            query_set: query_set.to_string(),
            stats: None,
        };
        self.inner.save_dir(dir, &manifest).map_err(py_err)?;
        Ok(())
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names.clone()
    }

    #[getter]
    fn n_queries(&self) -> usize {
        self.inner.answers.n_queries
    }

    fn row(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err(format!("sample {i} out of range")));
        }
        Ok(self.inner.answers.row(i).to_vec())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// A discrete task whose posteriors and mutual informations are exact.
#[pyclass(name = "TaskModel", module = "vip_py", skip_from_py_object)]
#[derive(Clone)]
struct PyTaskModel {
    inner: DiscreteTaskModel,
}

fn history(observed: Vec<(usize, usize)>) -> DiscreteHistory {
    DiscreteHistory { observed }
}

#[pymethods]
impl PyTaskModel {
    /// `cond_probs[q][y][a]` is P(answer a to query q | class y).
    #[new]
    fn new(prior: Vec<f64>, cond_probs: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        let sizes = cond_probs
            .iter()
            .map(|t| t.first().map_or(0, Vec::len))
            .collect();
        let inner = DiscreteTaskModel::new(prior, sizes, cond_probs).map_err(py_err)?;
        Ok(PyTaskModel { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: DiscreteTaskModel = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyTaskModel { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    #[getter]
    fn n_queries(&self) -> usize {
        self.inner.n_queries()
    }

    #[pyo3(signature = (observed = Vec::new()))]
    fn posterior(&self, observed: Vec<(usize, usize)>) -> PyResult<Vec<f64>> {
        self.inner.posterior(&history(observed)).map_err(py_err)
    }

    /// Conditional mutual information in nats.
    #[pyo3(signature = (query, observed = Vec::new()))]
    fn mutual_information(&self, query: usize, observed: Vec<(usize, usize)>) -> PyResult<f64> {
        exact::mutual_information(&self.inner, query, &history(observed)).map_err(py_err)
    }

    #[pyo3(signature = (observed = Vec::new(), tol = 1e-9))]
    fn most_informative(&self, observed: Vec<(usize, usize)>, tol: f64) -> PyResult<Vec<usize>> {
        exact::most_informative_set(&self.inner, &history(observed), tol).map_err(py_err)
    }

    /// Greedy pursuit on one row of real answers, read by sign.
    #[pyo3(signature = (row, threshold, budget = None))]
    fn run(&self, row: Vec<f64>, threshold: f64, budget: Option<usize>) -> PyResult<PyTrajectory> {
        let rule = rule(threshold, budget, self.inner.n_queries())?;
        let inner = exact::exact_ip_run(&self.inner, &mut SignRow(&row), rule).map_err(py_err)?;
        Ok(PyTrajectory { inner })
    }

    fn select_queries(&self, keep: Vec<usize>) -> PyResult<Self> {
        let inner = self.inner.select_queries(&keep).map_err(py_err)?;
        Ok(PyTaskModel { inner })
    }
}

/// A trained querier/predictor pair with its metadata.
#[pyclass(name = "Model", module = "vip_py", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: Checkpoint,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: Checkpoint::read(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.write(path).map_err(py_err)
    }

    /// Train with the short two-stage schedule; epoch counts and width can
    /// be overridden. Releases the GIL while training.
    #[staticmethod]
    #[pyo3(signature = (data, seed = 0, width = 512, stage1_epochs = None, stage2_epochs = None, batch_size = None))]
    fn train(
        py: Python<'_>,
        data: &PyDataset,
        seed: u64,
        width: usize,
        stage1_epochs: Option<usize>,
        stage2_epochs: Option<usize>,
        batch_size: Option<usize>,
    ) -> PyResult<Self> {
        let mut cfg = TrainConfig::desk(seed);
        if let Some(e) = stage1_epochs {
            cfg.stage1.epochs = e;
        }
        if let Some(e) = stage2_epochs {
            cfg.stage2.epochs = e;
        }
        if let Some(b) = batch_size {
            cfg.batch_size = b;
        }
        let mlp = MlpConfig {
            hidden_width: width,
            ..MlpConfig::default()
        };
        let ds = &data.inner;
        let (model, log) = py.detach(|| engine::train(&cfg, mlp, ds, None)).map_err(py_err)?;
        let meta = CheckpointMeta {
            class_names: ds.class_names.clone(),
            train: Some(cfg),
            final_loss: log.last().map(|r| r.loss),
            ..CheckpointMeta::default()
        };
        Ok(PyModel {
            inner: Checkpoint::new(model, meta),
        })
    }

    #[getter]
    fn n_queries(&self) -> usize {
        self.inner.model.n_queries()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.meta.class_names.clone()
    }

    /// Predictor posterior for a partial history given as `{query: answer}`
    /// pairs.
    fn posterior(&self, observed: Vec<(usize, f64)>) -> PyResult<Vec<f64>> {
        let m = &self.inner.model;
        let mut h = engine::History::empty(m.n_queries());
        for (q, a) in observed {
            h.add(q, a).map_err(py_err)?;
        }
        m.predictor_forward(&h).map_err(py_err)
    }

    #[pyo3(signature = (row, threshold, budget = None))]
    fn infer(&self, row: Vec<f64>, threshold: f64, budget: Option<usize>) -> PyResult<PyTrajectory> {
        let m = &self.inner.model;
        let rule = rule(threshold, budget, m.n_queries())?;
        let inner = engine::infer(m, &mut RowSource(&row), rule).map_err(py_err)?;
        Ok(PyTrajectory { inner })
    }

    /// `(accuracy, average number of queries)` on a split.
    #[pyo3(signature = (data, threshold, budget = None))]
    fn evaluate(&self, data: &PyDataset, threshold: f64, budget: Option<usize>) -> PyResult<(f64, f64)> {
        let m = &self.inner.model;
        let rule = rule(threshold, budget, m.n_queries())?;
        let ts = engine::infer_dataset(m, &data.inner, rule).map_err(py_err)?;
        Ok(engine::summarize(&ts, &data.inner.labels))
    }

    /// `(threshold, avg_queries, accuracy)` per threshold.
    #[pyo3(signature = (data, thresholds, budget = None))]
    fn sweep(&self, data: &PyDataset, thresholds: Vec<f64>, budget: Option<usize>) -> PyResult<Vec<(f64, f64, f64)>> {
        let points = engine::sweep_tradeoff(&self.inner.model, &data.inner, &thresholds, budget).map_err(py_err)?;
        Ok(points.iter().map(|p| (p.threshold, p.avg_queries, p.accuracy)).collect())
    }

    /// Edit the answer at `step`. `mode="reanswer"` keeps the query order;
    /// `mode="replay"` resumes from `row` after the edit.
    #[pyo3(signature = (trajectory, step, answer, threshold, budget = None, mode = "reanswer", row = None))]
    #[allow(clippy::too_many_arguments)]
    fn intervene(
        &self,
        trajectory: &PyTrajectory,
        step: usize,
        answer: f64,
        threshold: f64,
        budget: Option<usize>,
        mode: &str,
        row: Option<Vec<f64>>,
    ) -> PyResult<PyTrajectory> {
        let m = &self.inner.model;
        let rule = rule(threshold, budget, m.n_queries())?;
        let inner = match (mode, row) {
            ("reanswer", _) => engine::intervene(m, &trajectory.inner, step, answer, rule, Intervention::Reanswer),
            ("replay", Some(row)) => engine::intervene(
                m,
                &trajectory.inner,
                step,
                answer,
                rule,
                Intervention::Replay(&mut RowSource(&row)),
            ),
            ("replay", None) => return Err(PyValueError::new_err("replay needs the answer row")),
            (other, _) => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
        }
        .map_err(py_err)?;
        Ok(PyTrajectory { inner })
    }
}

/// Build a synthetic task. Returns `(task_model, train, test, roles)` where
/// each role is `informative`, `constant`, `duplicate` or `class_indicator`.
#[pyfunction]
#[pyo3(signature = (seed = 0, n_train = None, n_test = None, noise = None, indicator_noise = None))]
fn synthetic_task(
    seed: u64,
    n_train: Option<usize>,
    n_test: Option<usize>,
    noise: Option<f64>,
    indicator_noise: Option<f64>,
) -> PyResult<(PyTaskModel, PyDataset, PyDataset, Vec<&'static str>)> {
    let mut cfg = SyntheticTaskConfig::standard(seed);
    if let Some(n) = n_train {
        cfg.n_train = n;
    }
    if let Some(n) = n_test {
        cfg.n_test = n;
    }
    if let Some(v) = noise {
        cfg.noise = v;
    }
    if indicator_noise.is_some() {
        cfg.indicator_noise = indicator_noise;
    }
    let task = exact::make_synthetic_task(&cfg).map_err(py_err)?;
    let roles = task
        .roles
        .iter()
        .map(|r| match r {
            exact::QueryRole::Informative => "informative",
            exact::QueryRole::Constant => "constant",
            exact::QueryRole::Duplicate { .. } => "duplicate",
            exact::QueryRole::ClassIndicator { .. } => "class_indicator",
        })
        .collect();
    Ok((
        PyTaskModel { inner: task.model },
        PyDataset { inner: task.train },
        PyDataset { inner: task.test },
        roles,
    ))
}

/// Plug-in mutual information (nats) between a real-valued column and the
/// labels; `bins=None` splits by sign.
#[pyfunction]
#[pyo3(signature = (column, labels, bins = None))]
fn empirical_mi(column: Vec<f64>, labels: Vec<usize>, bins: Option<usize>) -> PyResult<f64> {
    if column.len() != labels.len() {
        return Err(PyValueError::new_err("column and labels differ in length"));
    }
    let binning = bins.map_or(Binning::Sign, Binning::Quantile);
    Ok(exact::empirical_mi(&column, &labels, binning))
}

/// `(lambda, sparsity, test_accuracy)` along an ascending path.
#[pyfunction]
#[pyo3(signature = (train, test, lambdas, alpha = 0.99))]
fn elastic_net_path(
    train: &PyDataset,
    test: &PyDataset,
    lambdas: Vec<f64>,
    alpha: f64,
) -> PyResult<Vec<(f64, usize, f64)>> {
    let cfg = ElasticNetConfig {
        alpha,
        ..ElasticNetConfig::default()
    };
    let (_, points) = core_elastic_net_path(&train.inner, &test.inner, &lambdas, &cfg).map_err(py_err)?;
    Ok(points.iter().map(|p| (p.lambda, p.sparsity, p.test_accuracy)).collect())
}

#[pymodule]
pub fn vip_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTaskModel>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthetic_task, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_mi, m)?)?;
    m.add_function(wrap_pyfunction!(elastic_net_path, m)?)?;
    Ok(())
}
