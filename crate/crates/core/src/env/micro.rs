//! Tiny tabular MDP-DAG with explicit tables, small enough to enumerate.
//!
//! Node `i` moves on its own state and the joint action of Δ(i). Joint
//! actions are mixed-radix indices over Δ(i) in ascending node order, the
//! first node most significant.

use rand::distr::{Distribution, weighted::WeightedIndex};
use rand::Rng;

use super::{one_hot, EnvContract, EnvError, EnvSnapshot, Environment, StepOutput};
use crate::dag::{DagTopology, NodeId};
use crate::rng::{stream, StreamRng};

pub const MAX_NODES: usize = 3;
pub const MAX_STATES: usize = 3;
pub const MAX_ACTIONS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct MicroSpec {
    pub topology: DagTopology,
    pub n_states: Vec<usize>,
    pub n_actions: Vec<usize>,
    pub initial: Vec<Vec<f64>>,
    /// `transitions[i][s * J_i + j]` is the next-state distribution of node
    /// `i`, where `J_i` counts the joint actions of Δ(i).
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[k][s * J_k + j]` for sinks; empty for other nodes.
    pub rewards: Vec<Vec<f64>>,
    pub horizon: usize,
    pub goal_period: usize,
}

impl MicroSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        let n = self.topology.node_count();
        let bad = |m: String| Err(EnvError::InvalidDistribution(m));
        if n > MAX_NODES {
            return bad(format!("{n} nodes exceed the limit of {MAX_NODES}"));
        }
        for (what, len) in [
            ("n_states", self.n_states.len()),
            ("n_actions", self.n_actions.len()),
            ("initial", self.initial.len()),
            ("transitions", self.transitions.len()),
            ("rewards", self.rewards.len()),
        ] {
            if len != n {
                return bad(format!("{what} has {len} entries for {n} nodes"));
            }
        }
        if self.horizon == 0 || self.goal_period == 0 {
            return Err(EnvError::InvalidConfig("horizon and goal period must be positive".into()));
        }
        let check_row = |row: &[f64], len: usize, what: &str| -> Result<(), EnvError> {
            if row.len() != len {
                return Err(EnvError::InvalidDistribution(format!("{what}: {} entries, expected {len}", row.len())));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(EnvError::InvalidDistribution(format!("{what}: {row:?} is not a distribution")));
            }
            Ok(())
        };
        for i in 0..n {
            let (s, a) = (self.n_states[i], self.n_actions[i]);
            if !(1..=MAX_STATES).contains(&s) || !(1..=MAX_ACTIONS).contains(&a) {
                return bad(format!("node {i}: {s} states, {a} actions"));
            }
            check_row(&self.initial[i], s, &format!("initial[{i}]"))?;
            let rows = s * self.joint_count(i);
            if self.transitions[i].len() != rows {
                return bad(format!("transitions[{i}] has {} rows, expected {rows}", self.transitions[i].len()));
            }
            for (r, row) in self.transitions[i].iter().enumerate() {
                check_row(row, s, &format!("transitions[{i}][{r}]"))?;
            }
            let want = if self.topology.is_sink(NodeId(i)) { rows } else { 0 };
            if self.rewards[i].len() != want {
                return bad(format!("rewards[{i}] has {} entries, expected {want}", self.rewards[i].len()));
            }
            if self.rewards[i].iter().any(|r| !r.is_finite()) {
                return bad(format!("rewards[{i}] not finite"));
            }
        }
        Ok(())
    }

    /// Number of joint actions of Δ(i).
    pub fn joint_count(&self, i: usize) -> usize {
        self.delta(i).iter().map(|j| self.n_actions[j.index()]).product()
    }

    pub fn delta(&self, i: usize) -> &[NodeId] {
        self.topology.ancestors(NodeId(i)).expect("node in range")
    }

    /// Mixed-radix index of the joint action of Δ(i).
    pub fn joint_index(&self, i: usize, actions: &[usize]) -> usize {
        self.delta(i).iter().fold(0, |acc, j| acc * self.n_actions[j.index()] + actions[j.index()])
    }

    pub fn sink_reward(&self, k: usize, state: usize, actions: &[usize]) -> f64 {
        self.rewards[k][state * self.joint_count(k) + self.joint_index(k, actions)]
    }

    pub fn transition(&self, i: usize, state: usize, actions: &[usize]) -> &[f64] {
        &self.transitions[i][state * self.joint_count(i) + self.joint_index(i, actions)]
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.rewards.iter().flatten().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Bound on the discounted team reward beyond the horizon:
    /// γ^H · |ℒ| · r_max / (1 − γ).
    pub fn tail_bound(&self, gamma: f64, horizon: usize) -> f64 {
        let sinks = self.topology.sinks().len() as f64;
        gamma.powi(horizon as i32) * sinks * self.max_abs_reward() / (1.0 - gamma)
    }

    /// One node, one state, one action, reward `r` every step.
    pub fn constant(reward: f64, horizon: usize) -> Self {
        Self {
            topology: DagTopology::new(1, &[]).expect("single node"),
            n_states: vec![1],
            n_actions: vec![1],
            initial: vec![vec![1.0]],
            transitions: vec![vec![vec![1.0]]],
            rewards: vec![vec![reward]],
            horizon,
            goal_period: 1,
        }
    }

    /// Random instance on `topology` with random table sizes.
    pub fn random<R: Rng + ?Sized>(topology: DagTopology, horizon: usize, rng: &mut R) -> Result<Self, EnvError> {
        let n = topology.node_count();
        if n > MAX_NODES {
            return Err(EnvError::InvalidDistribution(format!("{n} nodes exceed the limit of {MAX_NODES}")));
        }
        let n_states: Vec<usize> = (0..n).map(|_| rng.random_range(1..=MAX_STATES)).collect();
        let n_actions: Vec<usize> = (0..n).map(|_| rng.random_range(1..=MAX_ACTIONS)).collect();
        let dist = |len: usize, rng: &mut R| {
            let w: Vec<f64> = (0..len).map(|_| rng.random::<f64>() + 1e-3).collect();
            let t: f64 = w.iter().sum();
            w.into_iter().map(|x| x / t).collect::<Vec<f64>>()
        };
        let mut spec = Self {
            topology,
            initial: Vec::new(),
            transitions: Vec::new(),
            rewards: Vec::new(),
            n_states,
            n_actions,
            horizon,
            goal_period: 1,
        };
        for i in 0..n {
            let s = spec.n_states[i];
            let rows = s * spec.joint_count(i);
            spec.initial.push(dist(s, rng));
            spec.transitions.push((0..rows).map(|_| dist(s, rng)).collect());
            let r = if spec.topology.is_sink(NodeId(i)) { (0..rows).map(|_| rng.random::<f64>()).collect() } else { Vec::new() };
            spec.rewards.push(r);
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroState {
    pub states: Vec<usize>,
    pub step: usize,
    pub rng: StreamRng,
}

#[derive(Debug, Clone)]
pub struct MicroEnv {
    spec: MicroSpec,
    contract: EnvContract,
    state: MicroState,
}

fn draw<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    WeightedIndex::new(p).expect("validated distribution").sample(rng)
}

impl MicroEnv {
    pub fn new(spec: MicroSpec) -> Result<Self, EnvError> {
        spec.validate()?;
        let contract = EnvContract {
            topology: spec.topology.clone(),
            obs_dims: spec.n_states.clone(),
            action_sizes: spec.n_actions.clone(),
            goal_period: spec.goal_period,
            max_steps: spec.horizon,
        };
        let state = MicroState { states: vec![0; spec.n_states.len()], step: 0, rng: stream(0, "micro") };
        let mut env = Self { spec, contract, state };
        env.reset(0);
        Ok(env)
    }

    pub fn spec(&self) -> &MicroSpec {
        &self.spec
    }

    pub fn state(&self) -> &MicroState {
        &self.state
    }
}

impl Environment for MicroEnv {
    fn contract(&self) -> &EnvContract {
        &self.contract
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, "micro");
        let states = self.spec.initial.iter().map(|p| draw(p, &mut rng)).collect();
        self.state = MicroState { states, step: 0, rng };
        self.observations()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutput, EnvError> {
        self.contract.check_actions(actions)?;
        if self.is_done() {
            return Err(EnvError::EpisodeOver);
        }
        let spec = &self.spec;
        let s = &mut self.state;
        let reward: f64 =
            spec.topology.sinks().iter().map(|k| spec.sink_reward(k.index(), s.states[k.index()], actions)).sum();
        let next: Vec<usize> =
            (0..s.states.len()).map(|i| draw(spec.transition(i, s.states[i], actions), &mut s.rng)).collect();
        s.states = next;
        s.step += 1;
        Ok(StepOutput { observations: self.observations(), team_reward: reward, done: self.is_done() })
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        self.state.states.iter().zip(&self.spec.n_states).map(|(&s, &n)| one_hot(n, s)).collect()
    }

    fn step_index(&self) -> usize {
        self.state.step
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot::Micro(Box::new(self.spec.clone()), self.state.clone())
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<(), EnvError> {
        match snapshot {
            EnvSnapshot::Micro(spec, s) if **spec == self.spec => {
                self.state = s.clone();
                Ok(())
            }
            _ => Err(EnvError::VersionMismatch),
        }
    }

    fn check_invariants(&self) -> Result<(), EnvError> {
        for (i, (&s, &n)) in self.state.states.iter().zip(&self.spec.n_states).enumerate() {
            if s >= n {
                return Err(EnvError::InvariantViolated(format!("node {i} in state {s} of {n}")));
            }
        }
        Ok(())
    }
}
