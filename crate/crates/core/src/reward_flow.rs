//! Synthetic-reward budget and its distribution from sinks to sources.
//!
//! Shares travel against the task arcs: a node keeps part of what it
//! receives and passes the rest to its task predecessors.

use thiserror::Error;

use crate::dag::{DagTopology, NodeId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardFlowError {
    #[error("expected {expected} {what}, got {got}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("budget must be non-negative, got {0}")]
    NegativeBudget(f64),
}

/// Output of the reward generator and distributor for one goal period.
#[derive(Debug, Clone, PartialEq)]
pub struct RgdOutput {
    pub q: f64,
    pub node_values: Vec<f64>,
    /// Indexed like [`DagTopology::arcs`]; the value of task arc `(j, i)`
    /// weighs what `i` passes down to `j`.
    pub arc_values: Vec<f64>,
}

impl RgdOutput {
    pub fn uniform(topology: &DagTopology, q: f64, v: f64, e: f64) -> Self {
        Self { q, node_values: vec![v; topology.node_count()], arc_values: vec![e; topology.arc_count()] }
    }

    fn check(&self, topology: &DagTopology) -> Result<(), RewardFlowError> {
        if self.node_values.len() != topology.node_count() {
            return Err(RewardFlowError::Length {
                what: "node values",
                expected: topology.node_count(),
                got: self.node_values.len(),
            });
        }
        if self.arc_values.len() != topology.arc_count() {
            return Err(RewardFlowError::Length {
                what: "arc values",
                expected: topology.arc_count(),
                got: self.arc_values.len(),
            });
        }
        if !self.node_values.iter().chain(&self.arc_values).all(|x| x.is_finite()) {
            return Err(RewardFlowError::NonFinite("RGD output"));
        }
        Ok(())
    }
}

/// Previous-episode statistics that scale the budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBaseline {
    pub r_bar: f64,
    pub n_bar: f64,
}

impl Default for RewardBaseline {
    fn default() -> Self {
        Self { r_bar: 0.0, n_bar: 1.0 }
    }
}

impl RewardBaseline {
    /// Only the latest episode is kept.
    pub fn update(&mut self, episode_total_reward: f64, goal_periods: usize) {
        self.r_bar = episode_total_reward;
        self.n_bar = goal_periods.max(1) as f64;
    }
}

pub fn update_baseline(mut baseline: RewardBaseline, episode_total_reward: f64, goal_periods: usize) -> RewardBaseline {
    baseline.update(episode_total_reward, goal_periods);
    baseline
}

/// `M = q·R̄/N̄`, floored at zero.
pub fn synthetic_budget(q: f64, baseline: &RewardBaseline) -> f64 {
    let q = q.clamp(0.0, 1.0);
    let m = q * baseline.r_bar / baseline.n_bar.max(1.0);
    if m.is_finite() { m.max(0.0) } else { 0.0 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShareTable {
    pub node_share: Vec<f64>,
    /// Indexed like [`DagTopology::arcs`].
    pub arc_share: Vec<f64>,
    pub initial_share: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub shares: ShareTable,
    pub rewards: Vec<f64>,
}

/// Initial shares of the sinks, in the order of `topology.sinks()`.
pub fn sink_initial_shares(topology: &DagTopology, v: &[f64]) -> Vec<f64> {
    let sinks = topology.sinks();
    let vals: Vec<f64> = sinks.iter().map(|k| v[k.index()].clamp(0.0, 1.0)).collect();
    let total: f64 = vals.iter().sum();
    if total > 0.0 {
        vals.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / sinks.len() as f64; sinks.len()]
    }
}

/// Split an initial share between the node and its recipients.
pub fn split_share(initial: f64, v: f64, e_row: &[f64]) -> (f64, Vec<f64>) {
    let v = v.clamp(0.0, 1.0);
    let e: Vec<f64> = e_row.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    let denom = v + e.iter().sum::<f64>();
    if denom > 0.0 {
        (initial * v / denom, e.iter().map(|x| initial * x / denom).collect())
    } else {
        let each = initial / (1 + e.len()) as f64;
        (each, vec![each; e.len()])
    }
}

pub fn distribute(topology: &DagTopology, rgd: &RgdOutput, budget: f64) -> Result<Distribution, RewardFlowError> {
    rgd.check(topology)?;
    if !budget.is_finite() {
        return Err(RewardFlowError::NonFinite("budget"));
    }
    if budget < 0.0 {
        return Err(RewardFlowError::NegativeBudget(budget));
    }
    let n = topology.node_count();
    let arc = |from: NodeId, to: NodeId| topology.arc_index(from, to).expect("arc exists by construction");

    let mut initial = vec![0.0; n];
    for (k, s) in topology.sinks().iter().zip(sink_initial_shares(topology, &rgd.node_values)) {
        initial[k.index()] = s;
    }
    let mut node_share = vec![0.0; n];
    let mut arc_share = vec![0.0; topology.arc_count()];
    for &i in topology.topological_order().iter().rev() {
        let (recipients, senders) = topology.reward_flow_neighbors(i).expect("valid node");
        if !senders.is_empty() {
            initial[i.index()] = senders.iter().map(|&k| arc_share[arc(i, k)]).sum();
        }
        let e_row: Vec<f64> = recipients.iter().map(|&j| rgd.arc_values[arc(j, i)]).collect();
        let (own, passed) = split_share(initial[i.index()], rgd.node_values[i.index()], &e_row);
        node_share[i.index()] = own;
        for (&j, s) in recipients.iter().zip(passed) {
            arc_share[arc(j, i)] = s;
        }
    }
    let rewards = node_share.iter().map(|s| s * budget).collect();
    Ok(Distribution { shares: ShareTable { node_share, arc_share, initial_share: initial }, rewards })
}
