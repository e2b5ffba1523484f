//! Simulation environments behind one MDP-DAG contract.
//!
//! Every environment uses action index 0 as its no-op.

mod factory;
mod logistics;
mod micro;
mod prey;

pub use factory::{FactoryConfig, FactoryEnv, FactoryState};
pub use logistics::{LogisticsConfig, LogisticsEnv, LogisticsState, DEMAND_BOUNDS};
pub use micro::{MicroEnv, MicroSpec, MicroState};
pub use prey::{PreyConfig, PreyEnv, PreyState};

use thiserror::Error;

use crate::dag::{DagError, DagTopology};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("action {action} out of range for node {node} (size {size})")]
    InvalidAction { node: usize, action: usize, size: usize },
    #[error("step called after the episode ended")]
    EpisodeOver,
    #[error("snapshot belongs to a differently configured environment")]
    VersionMismatch,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
    #[error("invariant violated: {0}")]
    InvariantViolated(String),
    #[error(transparent)]
    Dag(#[from] DagError),
}

/// Static shape of an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvContract {
    pub topology: DagTopology,
    pub obs_dims: Vec<usize>,
    pub action_sizes: Vec<usize>,
    pub goal_period: usize,
    pub max_steps: usize,
}

impl EnvContract {
    pub fn node_count(&self) -> usize {
        self.topology.node_count()
    }

    /// Length of the concatenated per-node observations.
    pub fn global_dim(&self) -> usize {
        self.obs_dims.iter().sum()
    }

    pub fn check_actions(&self, actions: &[usize]) -> Result<(), EnvError> {
        if actions.len() != self.action_sizes.len() {
            return Err(EnvError::ActionCount { expected: self.action_sizes.len(), got: actions.len() });
        }
        for (node, (&action, &size)) in actions.iter().zip(&self.action_sizes).enumerate() {
            if action >= size {
                return Err(EnvError::InvalidAction { node, action, size });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub observations: Vec<Vec<f64>>,
    pub team_reward: f64,
    pub done: bool,
}

/// Full copy of an environment's mutable state, RNG included.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSnapshot {
    Factory(FactoryConfig, FactoryState),
    Logistics(LogisticsConfig, LogisticsState),
    Prey(PreyConfig, PreyState),
    Micro(Box<MicroSpec>, MicroState),
}

pub trait Environment: Send {
    fn contract(&self) -> &EnvContract;

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>>;

    fn step(&mut self, actions: &[usize]) -> Result<StepOutput, EnvError>;

    fn observations(&self) -> Vec<Vec<f64>>;

    /// Steps taken since the last reset.
    fn step_index(&self) -> usize;

    fn snapshot(&self) -> EnvSnapshot;

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<(), EnvError>;

    fn check_invariants(&self) -> Result<(), EnvError>;

    fn topology(&self) -> &DagTopology {
        &self.contract().topology
    }

    fn global_state(&self) -> Vec<f64> {
        self.observations().concat()
    }

    fn is_done(&self) -> bool {
        self.step_index() >= self.contract().max_steps
    }
}

/// Environment selection used by configs and the CLI.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvKind {
    Factory(FactoryConfig),
    Logistics(LogisticsConfig),
    Prey(PreyConfig),
    Micro(Box<MicroSpec>),
}

impl EnvKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::Factory(_) => "factory",
            EnvKind::Logistics(_) => "logistics",
            EnvKind::Prey(_) => "prey",
            EnvKind::Micro(_) => "micro",
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>, EnvError> {
        Ok(match self {
            EnvKind::Factory(c) => Box::new(FactoryEnv::new(c.clone())?),
            EnvKind::Logistics(c) => Box::new(LogisticsEnv::new(c.clone())?),
            EnvKind::Prey(c) => Box::new(PreyEnv::new(c.clone())?),
            EnvKind::Micro(s) => Box::new(MicroEnv::new((**s).clone())?),
        })
    }
}

pub(crate) fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}
