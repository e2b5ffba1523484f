//! Python bindings: DAG queries, reward distribution, environments, training
//! runs, the theorem check and the metric helpers.

use std::sync::Mutex;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dagmarl::dag::{DagError, NodeId};
use dagmarl::env::{EnvError, EnvKind, EnvSnapshot, Environment, FactoryConfig, LogisticsConfig, PreyConfig};
use dagmarl::harness::{self, HarnessError};
use dagmarl::orchestrator::{EpisodeLog, OrchestratorError, RunMode, TrainConfig, Trainer};
use dagmarl::ppo::{PpoConfig, PpoError, TrajectoryBatch, Transition};
use dagmarl::reward_flow::{RewardBaseline, RewardFlowError, RgdOutput};
use dagmarl::theory::TheoryError;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn dag_err(e: DagError) -> PyErr {
    value_err(e)
}

fn ids(v: &[NodeId]) -> Vec<usize> {
    v.iter().map(|n| n.index()).collect()
}

#[pyclass(name = "DagTopology", module = "dagmarl", frozen)]
struct PyDag {
    inner: dagmarl::dag::DagTopology,
}

#[pymethods]
impl PyDag {
    #[new]
    #[pyo3(signature = (node_count, arcs, names=None))]
    fn new(node_count: usize, arcs: Vec<(usize, usize)>, names: Option<Vec<String>>) -> PyResult<Self> {
        let inner = match names {
            Some(names) => {
                if names.len() != node_count {
                    return Err(value_err(format!("{} names for {node_count} nodes", names.len())));
                }
                let named: Vec<(&str, &str)> = arcs.iter().map(|&(a, b)| (names[a].as_str(), names[b].as_str())).collect();
                let refs: Vec<&str> = names.iter().map(String::as_str).collect();
                dagmarl::dag::DagTopology::from_names(&refs, &named)
            }
            None => dagmarl::dag::DagTopology::new(node_count, &arcs),
        }
        .map_err(dag_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn arcs(&self) -> Vec<(usize, usize)> {
        self.inner.arcs().iter().map(|(a, b)| (a.index(), b.index())).collect()
    }

    fn topological_order(&self) -> Vec<usize> {
        ids(self.inner.topological_order())
    }

    fn sources(&self) -> Vec<usize> {
        ids(self.inner.sources())
    }

    fn sinks(&self) -> Vec<usize> {
        ids(self.inner.sinks())
    }

    fn predecessors(&self, node: usize) -> PyResult<Vec<usize>> {
        Ok(ids(self.inner.predecessors(NodeId(node)).map_err(dag_err)?))
    }

    fn successors(&self, node: usize) -> PyResult<Vec<usize>> {
        Ok(ids(self.inner.successors(NodeId(node)).map_err(dag_err)?))
    }

    /// Nodes upstream of `node`, including itself.
    fn ancestors(&self, node: usize) -> PyResult<Vec<usize>> {
        Ok(ids(self.inner.ancestors(NodeId(node)).map_err(dag_err)?))
    }

    fn descendants(&self, node: usize) -> PyResult<Vec<usize>> {
        Ok(ids(self.inner.descendants(NodeId(node)).map_err(dag_err)?))
    }

    fn influence(&self, node: usize) -> PyResult<Vec<usize>> {
        Ok(ids(self.inner.influence(NodeId(node)).map_err(dag_err)?))
    }

    fn __repr__(&self) -> String {
        format!("DagTopology(nodes={}, arcs={:?})", self.inner.node_count(), self.arcs())
    }
}

/// Splits `budget` over the nodes; returns node shares, arc shares and
/// per-node synthetic rewards.
#[pyfunction]
fn distribute<'py>(
    py: Python<'py>,
    topology: &PyDag,
    node_values: Vec<f64>,
    arc_values: Vec<f64>,
    budget: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let rgd = RgdOutput { q: 0.0, node_values, arc_values };
    let d = dagmarl::reward_flow::distribute(&topology.inner, &rgd, budget).map_err(|e: RewardFlowError| value_err(e))?;
    let out = PyDict::new(py);
    out.set_item("node_share", d.shares.node_share)?;
    out.set_item("arc_share", d.shares.arc_share)?;
    out.set_item("rewards", d.rewards)?;
    Ok(out)
}

/// Budget `q · R̄ / N̄` for one goal period.
#[pyfunction]
#[pyo3(signature = (q, r_bar, n_bar=1.0))]
fn synthetic_budget(q: f64, r_bar: f64, n_bar: f64) -> f64 {
    dagmarl::reward_flow::synthetic_budget(q, &RewardBaseline { r_bar, n_bar })
}

fn env_kind(name: &str, goal_periods: Option<usize>, goal_period: Option<usize>) -> PyResult<EnvKind> {
    Ok(match name {
        "factory" => {
            let mut c = FactoryConfig::default();
            c.goal_periods = goal_periods.unwrap_or(c.goal_periods);
            c.period_length = goal_period.unwrap_or(c.period_length);
            EnvKind::Factory(c)
        }
        "logistics" => {
            let mut c = LogisticsConfig::default();
            c.goal_period = goal_period.unwrap_or(c.goal_period);
            if let Some(p) = goal_periods {
                c.episode_length = p * c.goal_period;
            }
            EnvKind::Logistics(c)
        }
        "prey" => {
            let mut c = PreyConfig::default();
            c.goal_period = goal_period.unwrap_or(c.goal_period);
            if let Some(p) = goal_periods {
                c.max_steps = p * c.goal_period;
            }
            EnvKind::Prey(c)
        }
        other => return Err(value_err(format!("unknown environment `{other}`"))),
    })
}

/// Opaque copy of an environment's state.
#[pyclass(name = "Snapshot", module = "dagmarl", frozen)]
struct PySnapshot {
    inner: EnvSnapshot,
}

#[pyclass(name = "Environment", module = "dagmarl")]
struct PyEnv {
    inner: Mutex<Box<dyn Environment>>,
}

impl PyEnv {
    fn with<T>(&self, f: impl FnOnce(&mut dyn Environment) -> T) -> T {
        let mut guard = self.inner.lock().expect("environment lock poisoned");
        f(guard.as_mut())
    }
}

fn env_err(e: EnvError) -> PyErr {
    match e {
        EnvError::InvariantViolated(_) | EnvError::EpisodeOver => runtime_err(e),
        _ => value_err(e),
    }
}

#[pymethods]
impl PyEnv {
    /// `name` is one of `factory`, `logistics`, `prey`.
    #[new]
    #[pyo3(signature = (name, goal_periods=None, goal_period=None))]
    fn new(name: &str, goal_periods: Option<usize>, goal_period: Option<usize>) -> PyResult<Self> {
        let env = env_kind(name, goal_periods, goal_period)?.build().map_err(env_err)?;
        Ok(Self { inner: Mutex::new(env) })
    }

    fn reset(&self, seed: u64) -> Vec<Vec<f64>> {
        self.with(|e| e.reset(seed))
    }

    /// Returns `(observations, team_reward, done)`.
    fn step(&self, actions: Vec<usize>) -> PyResult<(Vec<Vec<f64>>, f64, bool)> {
        let out = self.with(|e| e.step(&actions)).map_err(env_err)?;
        Ok((out.observations, out.team_reward, out.done))
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        self.with(|e| e.observations())
    }

    fn global_state(&self) -> Vec<f64> {
        self.with(|e| e.global_state())
    }

    fn is_done(&self) -> bool {
        self.with(|e| e.is_done())
    }

    #[getter]
    fn step_index(&self) -> usize {
        self.with(|e| e.step_index())
    }

    #[getter]
    fn action_sizes(&self) -> Vec<usize> {
        self.with(|e| e.contract().action_sizes.clone())
    }

    #[getter]
    fn obs_dims(&self) -> Vec<usize> {
        self.with(|e| e.contract().obs_dims.clone())
    }

    #[getter]
    fn goal_period(&self) -> usize {
        self.with(|e| e.contract().goal_period)
    }

    #[getter]
    fn topology(&self) -> PyDag {
        PyDag { inner: self.with(|e| e.topology().clone()) }
    }

    fn snapshot(&self) -> PySnapshot {
        PySnapshot { inner: self.with(|e| e.snapshot()) }
    }

    fn restore(&self, snapshot: &PySnapshot) -> PyResult<()> {
        self.with(|e| e.restore(&snapshot.inner)).map_err(env_err)
    }

    fn check_invariants(&self) -> PyResult<()> {
        self.with(|e| e.check_invariants()).map_err(env_err)
    }

    /// Difference rewards of every agent against the no-op action; the
    /// environment then advances with the true joint action.
    fn step_with_difference_rewards(&self, actions: Vec<usize>) -> PyResult<(Vec<Vec<f64>>, f64, bool, Vec<f64>)> {
        let (out, d) = self
            .with(|e| dagmarl::orchestrator::difference_rewards(e, &actions, 0))
            .map_err(orchestrator_err)?;
        Ok((out.observations, out.team_reward, out.done, d))
    }
}

fn orchestrator_err(e: OrchestratorError) -> PyErr {
    match e {
        OrchestratorError::Config(_) | OrchestratorError::DimensionMismatch { .. } => value_err(e),
        OrchestratorError::Env(e) => env_err(e),
        _ => runtime_err(e),
    }
}

fn log_dict<'py>(py: Python<'py>, log: &EpisodeLog) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("episode", log.episode)?;
    d.set_item("team_reward", log.team_reward)?;
    d.set_item("steps", log.steps)?;
    d.set_item("goal_periods", log.goal_periods)?;
    d.set_item("budget", log.budget)?;
    d.set_item("follower_rewards", log.follower_rewards.clone())?;
    d.set_item("synthetic_rewards", log.synthetic_rewards.clone())?;
    Ok(d)
}

/// Episode-by-episode trainer for one run.
#[pyclass(name = "Trainer", module = "dagmarl")]
struct PyTrainer {
    inner: Mutex<Trainer>,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (env="factory", mode="proposed", seed=0, hidden=vec![64, 64], learning_rate=1e-4, goal_periods=None, goal_period=None, goal_dim=4, gsf_stride=3))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        env: &str,
        mode: &str,
        seed: u64,
        hidden: Vec<usize>,
        learning_rate: f64,
        goal_periods: Option<usize>,
        goal_period: Option<usize>,
        goal_dim: usize,
        gsf_stride: usize,
    ) -> PyResult<Self> {
        let mode: RunMode = mode.parse().map_err(orchestrator_err)?;
        let cfg = TrainConfig {
            mode,
            seed,
            episodes: 0,
            ppo: PpoConfig { learning_rate, ..PpoConfig::default() },
            hidden,
            goal_dim,
            gsf_stride,
            ..TrainConfig::default()
        };
        let kind = env_kind(env, goal_periods, goal_period)?;
        let trainer = Trainer::from_kind(&kind, cfg).map_err(orchestrator_err)?;
        Ok(Self { inner: Mutex::new(trainer) })
    }

    /// Plays one episode, updates every agent and returns the episode log.
    fn run_episode<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let log = {
            let mut t = self.inner.lock().expect("trainer lock poisoned");
            t.run_episode().map_err(orchestrator_err)?
        };
        log_dict(py, &log)
    }

    fn train<'py>(&self, py: Python<'py>, episodes: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let logs: Vec<EpisodeLog> = {
            let mut t = self.inner.lock().expect("trainer lock poisoned");
            (0..episodes).map(|_| t.run_episode()).collect::<Result<_, _>>().map_err(orchestrator_err)?
        };
        logs.iter().map(|l| log_dict(py, l)).collect()
    }

    fn save(&self, directory: &str) -> PyResult<()> {
        let t = self.inner.lock().expect("trainer lock poisoned");
        t.agents().save(std::path::Path::new(directory)).map_err(orchestrator_err)
    }

    #[getter]
    fn baseline(&self) -> (f64, f64) {
        let b = self.inner.lock().expect("trainer lock poisoned").baseline();
        (b.r_bar, b.n_bar)
    }
}

/// Runs the random theorem campaign; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (trials=200, seed=1, gamma=0.9, tolerance=1e-6))]
fn verify_theorem<'py>(py: Python<'py>, trials: usize, seed: u64, gamma: f64, tolerance: f64) -> PyResult<Bound<'py, PyDict>> {
    let r = dagmarl::theory::run_campaign(trials, seed, gamma, tolerance).map_err(|e: TheoryError| value_err(e))?;
    let d = PyDict::new(py);
    d.set_item("trials", r.trials)?;
    d.set_item("failures", r.failures)?;
    d.set_item("max_violation", r.max_violation)?;
    d.set_item("tightest_slack", r.tightest_slack)?;
    d.set_item("max_tight_gap", r.max_tight_gap)?;
    Ok(d)
}

/// Advantages and returns; `terminals[t]` cuts bootstrapping after step `t`.
#[pyfunction]
#[pyo3(signature = (rewards, values, terminals, bootstrap_value=0.0, gamma=0.99, lam=0.95))]
fn compute_gae(
    rewards: Vec<f64>,
    values: Vec<f64>,
    terminals: Vec<bool>,
    bootstrap_value: f64,
    gamma: f64,
    lam: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    if values.len() != rewards.len() || terminals.len() != rewards.len() {
        return Err(value_err("rewards, values and terminals must have equal length"));
    }
    let transitions = rewards
        .iter()
        .zip(&values)
        .zip(&terminals)
        .map(|((&reward, &value), &terminal)| Transition {
            state: Vec::new(),
            action: dagmarl::nn::Action::Discrete(0),
            log_prob: 0.0,
            reward,
            value,
            terminal,
        })
        .collect();
    dagmarl::ppo::compute_gae(&TrajectoryBatch { transitions, bootstrap_value }, gamma, lam)
        .map_err(|e: PpoError| value_err(e))
}

#[pyfunction]
fn gsf_len(period: usize, stride: usize) -> usize {
    dagmarl::orchestrator::gsf_len(period, stride)
}

#[pyfunction]
#[pyo3(signature = (series, window=100))]
fn moving_average(series: Vec<f64>, window: usize) -> PyResult<Vec<f64>> {
    harness::moving_average(&series, window).map_err(|e: HarnessError| value_err(e))
}

#[pyfunction]
fn min_max_normalize(series: Vec<f64>) -> Vec<f64> {
    harness::min_max_normalize(&series)
}

/// Runs the command-line interface with `argv` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn run_cli(argv: Vec<String>) -> i32 {
    harness::run_cli(std::iter::once("dagmarl".to_string()).chain(argv))
}

#[pymodule]
#[pyo3(name = "dagmarl")]
fn dagmarl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDag>()?;
    m.add_class::<PyEnv>()?;
    m.add_class::<PySnapshot>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(distribute, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_budget, m)?)?;
    m.add_function(wrap_pyfunction!(verify_theorem, m)?)?;
    m.add_function(wrap_pyfunction!(compute_gae, m)?)?;
    m.add_function(wrap_pyfunction!(gsf_len, m)?)?;
    m.add_function(wrap_pyfunction!(moving_average, m)?)?;
    m.add_function(wrap_pyfunction!(min_max_normalize, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
