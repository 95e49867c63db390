//! Python bindings. Structured values cross the boundary as plain dicts and
//! lists with the same field names as the Rust types.

use std::sync::Arc;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use outbreak_core::allocator::{q_rank_allocate as rank, CandidateAction};
use outbreak_core::controllers::{bin_search_m as search, ppo_train, PpoConfig, PpoController};
use outbreak_core::env::MultiEnv;
use outbreak_core::harness::{run_experiment as run_spec, ExperimentSpec};
use outbreak_core::objective::cluster_reward as reward;
use outbreak_core::params::{CostConfig, SimConfig};
use outbreak_core::policy::{step_policy, Policy, PolicyKind, StepOverrides};
use outbreak_core::session::{Binding, SessionConfig, SessionManager, SessionResources};
use outbreak_core::value::checkpoint::Checkpoint;
use outbreak_core::value::{td_train, QEstimator, TrainConfig};
use outbreak_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::NotFound(m) => PyKeyError::new_err(m),
        Error::Param { .. } | Error::Input(_) | Error::Config(_) | Error::Json(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn from_py_or_default<T: DeserializeOwned + Default>(obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    obj.map(from_py).transpose().map(Option::unwrap_or_default)
}

/// Value estimator: analytic or loaded from a checkpoint.
#[pyclass(frozen)]
#[derive(Clone)]
struct Estimator {
    inner: Arc<QEstimator>,
}

#[pymethods]
impl Estimator {
    #[staticmethod]
    #[pyo3(signature = (alpha2=0.1))]
    fn analytic(alpha2: f64) -> Self {
        Self {
            inner: Arc::new(QEstimator::analytic(alpha2)),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let est = Checkpoint::load(path).and_then(|c| c.to_estimator()).map_err(py_err)?;
        Ok(Self { inner: Arc::new(est) })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        Checkpoint::for_estimator::<()>(&self.inner, None)
            .and_then(|c| c.save(path))
            .map_err(py_err)
    }

    #[getter]
    fn backend(&self) -> &'static str {
        self.inner.backend_name()
    }

    #[getter]
    fn alpha2(&self) -> f64 {
        self.inner.alpha2()
    }
}

/// Trained multiplier controller.
#[pyclass(frozen)]
#[derive(Clone)]
struct Controller {
    inner: Arc<PpoController>,
}

#[pymethods]
impl Controller {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let c = PpoController::load(std::path::Path::new(path)).map_err(py_err)?;
        Ok(Self { inner: Arc::new(c) })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(std::path::Path::new(path), None).map_err(py_err)
    }

    #[getter]
    fn m_range(&self) -> (f64, f64) {
        (self.inner.m_min, self.inner.m_max)
    }
}

fn bind_policy(name: &str, estimator: Option<&Estimator>, controller: Option<&Controller>) -> PyResult<Policy> {
    let kind: PolicyKind = name.parse().map_err(py_err)?;
    if let PolicyKind::Heuristic { heuristic } = kind {
        return Ok(Policy::heuristic(heuristic));
    }
    let est = estimator.map(|e| e.inner.clone());
    Policy::new(kind, est, controller.map(|c| c.inner.clone())).map_err(py_err)
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EnvConfig {
    sim: SimConfig,
    costs: CostConfig,
}

#[derive(Serialize)]
struct StepSummary {
    day: usize,
    multiplier: f64,
    demand: usize,
    executed: usize,
    budget: usize,
    controller_evals: usize,
    rewards: Vec<(usize, f64)>,
    done: bool,
}

/// Multi-cluster environment with beliefs, stepped by a named policy.
#[pyclass]
struct Env {
    inner: MultiEnv,
}

#[pymethods]
impl Env {
    /// `config` is `{"sim": {...}, "costs": {...}}`; missing fields take defaults.
    #[new]
    #[pyo3(signature = (seed, config=None))]
    fn new(seed: u64, config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let cfg: EnvConfig = from_py_or_default(config)?;
        let inner = MultiEnv::new(&cfg.sim, &cfg.costs, seed).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// One day under `policy`; `m` and `budget` override the step.
    #[pyo3(signature = (policy, estimator=None, controller=None, m=None, budget=None))]
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        policy: &str,
        estimator: Option<&Estimator>,
        controller: Option<&Controller>,
        m: Option<f64>,
        budget: Option<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let default_est;
        let estimator = match estimator {
            Some(e) => Some(e),
            None => {
                default_est = Estimator::analytic(self.inner.costs.alpha2);
                Some(&default_est)
            }
        };
        let p = bind_policy(policy, estimator, controller)?;
        let day = self.inner.state.day;
        let (d, r) = step_policy(&mut self.inner, &p, &StepOverrides { multiplier: m, budget }).map_err(py_err)?;
        let s = StepSummary {
            day,
            multiplier: d.multiplier,
            demand: d.demand,
            executed: r.tests,
            budget: d.budget,
            controller_evals: d.controller_evals,
            rewards: r.records.iter().map(|c| (c.cluster, c.reward.reward)).collect(),
            done: self.inner.is_done(),
        };
        to_py(py, &s)
    }

    #[getter]
    fn day(&self) -> usize {
        self.inner.state.day
    }

    #[getter]
    fn done(&self) -> bool {
        self.inner.is_done()
    }

    /// Posterior infection probability of one individual.
    fn q(&self, cluster: usize, individual: usize) -> PyResult<f64> {
        let c = self.inner.state.cluster(cluster).map_err(py_err)?;
        if individual >= c.size {
            return Err(PyValueError::new_err(format!("individual {individual} out of range")));
        }
        Ok(self.inner.q_now(cluster, individual))
    }

    fn global_obs(&self) -> PyResult<Vec<f64>> {
        self.inner.global_obs().map(|g| g.values).map_err(py_err)
    }

    fn state<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.state)
    }
}

/// Interactive sessions: create, step with overrides, fork and compare.
#[pyclass(frozen)]
struct Sessions {
    inner: SessionManager,
}

#[pymethods]
impl Sessions {
    #[new]
    #[pyo3(signature = (cap=16, estimator=None, controller=None))]
    fn new(cap: usize, estimator: Option<&Estimator>, controller: Option<&Controller>) -> Self {
        let estimator = estimator.map(|e| e.inner.clone()).unwrap_or_else(|| Arc::new(QEstimator::analytic(0.1)));
        Self {
            inner: SessionManager::new(
                cap,
                SessionResources {
                    estimator,
                    controller: controller.map(|c| c.inner.clone()),
                },
            ),
        }
    }

    /// `config` holds `seed`, `binding` and optional `sim` and `costs`.
    fn create<'py>(&self, py: Python<'py>, config: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let cfg: SessionConfig = from_py(config)?;
        to_py(py, &self.inner.create(cfg).map_err(py_err)?)
    }

    #[pyo3(signature = (session, m=None, budget=None))]
    fn step<'py>(&self, py: Python<'py>, session: &str, m: Option<f64>, budget: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
        let d = py
            .detach(|| self.inner.step(session, StepOverrides { multiplier: m, budget }))
            .map_err(py_err)?;
        to_py(py, &d)
    }

    fn set_binding(&self, session: &str, binding: &Bound<'_, PyAny>) -> PyResult<()> {
        let b: Binding = from_py(binding)?;
        self.inner.set_binding(session, b).map_err(py_err)
    }

    fn fork<'py>(&self, py: Python<'py>, session: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.fork(session).map_err(py_err)?)
    }

    fn state<'py>(&self, py: Python<'py>, session: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.state(session).map_err(py_err)?)
    }

    fn metrics<'py>(&self, py: Python<'py>, session: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.metrics(session).map_err(py_err)?)
    }

    fn log<'py>(&self, py: Python<'py>, session: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.log(session).map_err(py_err)?)
    }

    fn diff<'py>(&self, py: Python<'py>, a: &str, b: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.diff(a, b).map_err(py_err)?)
    }

    fn reset(&self, session: &str) -> PyResult<()> {
        self.inner.reset(session).map_err(py_err)
    }

    fn ids(&self) -> Vec<String> {
        self.inner.ids()
    }
}

/// Top-`budget` positive candidates, given `(cluster, individual, delta_q)` triples.
#[pyfunction]
fn q_rank_allocate<'py>(py: Python<'py>, candidates: Vec<(usize, usize, f64)>, budget: usize) -> PyResult<Bound<'py, PyAny>> {
    let cands: Vec<CandidateAction> = candidates
        .into_iter()
        .map(|(cluster_id, individual_id, delta_q)| CandidateAction {
            cluster_id,
            individual_id,
            delta_q,
        })
        .collect();
    to_py(py, &rank(&cands, budget).map_err(py_err)?)
}

/// Smallest multiplier whose `demand(m)` fits the budget.
#[pyfunction]
#[pyo3(signature = (demand, budget, m_min=0.25, m_max=4.0, tol_iters=30))]
fn bin_search_m<'py>(py: Python<'py>, demand: &Bound<'py, PyAny>, budget: usize, m_min: f64, m_max: f64, tol_iters: usize) -> PyResult<Bound<'py, PyAny>> {
    let mut failure: Option<PyErr> = None;
    let r = search(
        |m| match demand.call1((m,)).and_then(|v| v.extract::<usize>()) {
            Ok(d) => d,
            Err(e) => {
                failure.get_or_insert(e);
                usize::MAX
            }
        },
        budget,
        m_min,
        m_max,
        tol_iters,
    );
    match failure {
        Some(e) => Err(e),
        None => to_py(py, &r),
    }
}

/// Per-capita cluster reward and its normalized components.
#[pyfunction]
fn cluster_reward<'py>(py: Python<'py>, s1: f64, s2: f64, s3: f64, n: usize, alpha2: f64, alpha3: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &reward(s1, s2, s3, n, alpha2, alpha3).map_err(py_err)?)
}

/// Run an experiment spec and return its result row and per-seed summaries.
#[pyfunction]
#[pyo3(signature = (spec=None))]
fn run_experiment<'py>(py: Python<'py>, spec: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let spec: ExperimentSpec = from_py_or_default(spec)?;
    let out = py.detach(|| run_spec(&spec)).map_err(py_err)?;
    to_py(py, &out)
}

#[pyfunction]
#[pyo3(signature = (config=None))]
fn train_q<'py>(py: Python<'py>, config: Option<&Bound<'py, PyAny>>) -> PyResult<(Estimator, Bound<'py, PyAny>)> {
    let cfg: TrainConfig = from_py_or_default(config)?;
    let (net, report) = py.detach(|| td_train(&cfg)).map_err(py_err)?;
    let est = Estimator {
        inner: Arc::new(QEstimator::Learned(net)),
    };
    Ok((est, to_py(py, &report)?))
}

#[pyfunction]
#[pyo3(signature = (config=None, estimator=None))]
fn train_ppo<'py>(py: Python<'py>, config: Option<&Bound<'py, PyAny>>, estimator: Option<&Estimator>) -> PyResult<(Controller, Bound<'py, PyAny>)> {
    let cfg: PpoConfig = from_py_or_default(config)?;
    let est = estimator
        .map(|e| e.inner.clone())
        .unwrap_or_else(|| Arc::new(QEstimator::analytic(cfg.costs.alpha2)));
    let (ctrl, report) = py.detach(|| ppo_train(&cfg, &est)).map_err(py_err)?;
    Ok((Controller { inner: Arc::new(ctrl) }, to_py(py, &report)?))
}

#[pymodule]
fn outbreak_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Estimator>()?;
    m.add_class::<Controller>()?;
    m.add_class::<Env>()?;
    m.add_class::<Sessions>()?;
    m.add_function(wrap_pyfunction!(q_rank_allocate, m)?)?;
    m.add_function(wrap_pyfunction!(bin_search_m, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_reward, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(train_q, m)?)?;
    m.add_function(wrap_pyfunction!(train_ppo, m)?)?;
    Ok(())
}
