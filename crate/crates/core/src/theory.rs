//! Exact and synthetic values on micro environments, and a brute-force
//! check of the synthetic-value lower bound.
//!
//! Values are expectations over the initial distribution, truncated at a
//! horizon `H`. Dynamic programming over the joint state is the main
//! engine; trajectory enumeration is kept as an independent cross-check.

use rand::Rng;
use thiserror::Error;

use crate::dag::{DagTopology, NodeId};
use crate::env::{EnvError, MicroSpec};
use crate::rng::stream;

pub const MAX_TRAJECTORIES: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("enumeration would visit {0} trajectories (limit {MAX_TRAJECTORIES})")]
    StateSpaceTooLarge(u64),
    #[error("contributions for sink {sink} sum to {sum} > 1 at tuple {tuple}")]
    InadmissibleContribution { sink: usize, tuple: usize, sum: f64 },
    #[error("negative reward {reward} at sink {sink}")]
    HypothesisViolated { sink: usize, reward: f64 },
    #[error("policy does not fit the environment: {0}")]
    PolicyShape(String),
    #[error("contribution table does not fit the environment: {0}")]
    ContributionShape(String),
    #[error("gamma must lie in (0, 1)")]
    Gamma,
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Per-node action distributions conditioned on the node's own state.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    /// `rows[i][s]` is a distribution over node `i`'s actions.
    pub rows: Vec<Vec<Vec<f64>>>,
}

impl TabularPolicy {
    pub fn deterministic(spec: &MicroSpec, actions: &[usize]) -> Self {
        let rows = (0..spec.n_states.len())
            .map(|i| {
                (0..spec.n_states[i])
                    .map(|_| (0..spec.n_actions[i]).map(|a| if a == actions[i] { 1.0 } else { 0.0 }).collect())
                    .collect()
            })
            .collect();
        Self { rows }
    }

    pub fn random<R: Rng + ?Sized>(spec: &MicroSpec, rng: &mut R) -> Self {
        let rows = (0..spec.n_states.len())
            .map(|i| {
                (0..spec.n_states[i])
                    .map(|_| {
                        let w: Vec<f64> = (0..spec.n_actions[i]).map(|_| rng.random::<f64>() + 1e-3).collect();
                        let t: f64 = w.iter().sum();
                        w.into_iter().map(|x| x / t).collect()
                    })
                    .collect()
            })
            .collect();
        Self { rows }
    }

    fn check(&self, spec: &MicroSpec) -> Result<(), TheoryError> {
        let bad = |m: String| Err(TheoryError::PolicyShape(m));
        if self.rows.len() != spec.n_states.len() {
            return bad(format!("{} nodes, expected {}", self.rows.len(), spec.n_states.len()));
        }
        for (i, node) in self.rows.iter().enumerate() {
            if node.len() != spec.n_states[i] {
                return bad(format!("node {i} has {} rows", node.len()));
            }
            for row in node {
                if row.len() != spec.n_actions[i]
                    || row.iter().any(|p| !(*p >= 0.0))
                    || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9
                {
                    return bad(format!("node {i}: {row:?} is not an action distribution"));
                }
            }
        }
        Ok(())
    }
}

/// `f_ik` tables: `tables[k][m]` belongs to the `m`-th member of Δ(k) and
/// is indexed by `state_tuple * J_k + action_tuple` over Δ(k). Non-sinks
/// have no tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionFunction {
    pub tables: Vec<Vec<Vec<f64>>>,
}

impl ContributionFunction {
    /// `f_kk ≡ 1` at every sink, zero elsewhere.
    pub fn sink_keeps_all(spec: &MicroSpec) -> Self {
        Self::build(spec, |spec, k, m| if spec.delta(k)[m].index() == k { 1.0 } else { 0.0 })
    }

    pub fn uniform(spec: &MicroSpec, value: f64) -> Self {
        Self::build(spec, |_, _, _| value)
    }

    fn build(spec: &MicroSpec, value: impl Fn(&MicroSpec, usize, usize) -> f64) -> Self {
        let tables = (0..spec.n_states.len())
            .map(|k| {
                if !spec.topology.is_sink(NodeId(k)) {
                    return Vec::new();
                }
                let len = tuple_count(spec, k);
                (0..spec.delta(k).len()).map(|m| vec![value(spec, k, m); len]).collect()
            })
            .collect();
        Self { tables }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { tables: self.tables.iter().map(|k| k.iter().map(|t| t.iter().map(|x| x * c).collect()).collect()).collect() }
    }

    /// Whether every row sums to one.
    pub fn is_tight(&self) -> bool {
        self.tables.iter().filter(|t| !t.is_empty()).all(|members| {
            (0..members[0].len()).all(|u| (members.iter().map(|t| t[u]).sum::<f64>() - 1.0).abs() <= 1e-12)
        })
    }

    pub fn check(&self, spec: &MicroSpec) -> Result<(), TheoryError> {
        let n = spec.n_states.len();
        if self.tables.len() != n {
            return Err(TheoryError::ContributionShape(format!("{} nodes, expected {n}", self.tables.len())));
        }
        for k in 0..n {
            let members = &self.tables[k];
            if !spec.topology.is_sink(NodeId(k)) {
                if !members.is_empty() {
                    return Err(TheoryError::ContributionShape(format!("non-sink {k} has tables")));
                }
                continue;
            }
            let len = tuple_count(spec, k);
            if members.len() != spec.delta(k).len() || members.iter().any(|t| t.len() != len) {
                return Err(TheoryError::ContributionShape(format!("sink {k} tables have the wrong shape")));
            }
            for u in 0..len {
                if members.iter().any(|t| !(t[u] >= 0.0)) {
                    return Err(TheoryError::ContributionShape(format!("negative contribution at sink {k}")));
                }
                let sum: f64 = members.iter().map(|t| t[u]).sum();
                if sum > 1.0 + 1e-12 {
                    return Err(TheoryError::InadmissibleContribution { sink: k, tuple: u, sum });
                }
            }
        }
        Ok(())
    }
}

fn tuple_count(spec: &MicroSpec, k: usize) -> usize {
    let states: usize = spec.delta(k).iter().map(|j| spec.n_states[j.index()]).product();
    states * spec.joint_count(k)
}

fn tuple_index(spec: &MicroSpec, k: usize, states: &[usize], actions: &[usize]) -> usize {
    let s = spec.delta(k).iter().fold(0, |acc, j| acc * spec.n_states[j.index()] + states[j.index()]);
    s * spec.joint_count(k) + spec.joint_index(k, actions)
}

/// Draw an admissible `f`: non-negative weights per `(sink, tuple)`
/// normalised to a row sum `u ~ U[0,1]`, or to 1 when `tight`.
pub fn sample_admissible_contribution<R: Rng + ?Sized>(spec: &MicroSpec, tight: bool, rng: &mut R) -> ContributionFunction {
    let n = spec.n_states.len();
    let mut tables = vec![Vec::new(); n];
    for (k, slot) in tables.iter_mut().enumerate() {
        if !spec.topology.is_sink(NodeId(k)) {
            continue;
        }
        let members = spec.delta(k).len();
        let len = tuple_count(spec, k);
        let mut t = vec![vec![0.0; len]; members];
        for u in 0..len {
            let w: Vec<f64> = (0..members).map(|_| rng.random::<f64>()).collect();
            let total: f64 = w.iter().sum();
            let target = if tight { 1.0 } else { rng.random::<f64>() };
            for (m, x) in w.iter().enumerate() {
                t[m][u] = if total > 0.0 { x / total * target } else { target / members as f64 };
            }
        }
        *slot = t;
    }
    ContributionFunction { tables }
}

/// Dense enumeration of joint states and joint actions.
struct Joint {
    n_states: Vec<usize>,
    n_actions: Vec<usize>,
}

impl Joint {
    fn new(spec: &MicroSpec) -> Self {
        Self { n_states: spec.n_states.clone(), n_actions: spec.n_actions.clone() }
    }

    fn state_count(&self) -> usize {
        self.n_states.iter().product()
    }

    fn action_count(&self) -> usize {
        self.n_actions.iter().product()
    }

    fn decode(radix: &[usize], mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; radix.len()];
        for (o, &r) in out.iter_mut().zip(radix).rev() {
            *o = idx % r;
            idx /= r;
        }
        out
    }
}

/// Joint model: initial distribution, policy, transition and per-node
/// reward vectors, all flattened over joint indices.
struct Model {
    initial: Vec<f64>,
    /// `policy[s][a]`
    policy: Vec<Vec<f64>>,
    /// `next[s][a]` as `(next_state, prob)` with zero-probability entries dropped.
    next: Vec<Vec<Vec<(usize, f64)>>>,
    /// `reward[s][a][i]`
    reward: Vec<Vec<Vec<f64>>>,
}

type RewardFn<'a> = dyn Fn(&[usize], &[usize]) -> Vec<f64> + 'a;

impl Model {
    fn build(spec: &MicroSpec, policy: &TabularPolicy, reward: &RewardFn<'_>) -> Self {
        let j = Joint::new(spec);
        let (ns, na) = (j.state_count(), j.action_count());
        let n = spec.n_states.len();
        let states: Vec<Vec<usize>> = (0..ns).map(|s| Joint::decode(&j.n_states, s)).collect();
        let actions: Vec<Vec<usize>> = (0..na).map(|a| Joint::decode(&j.n_actions, a)).collect();
        let initial = states.iter().map(|s| (0..n).map(|i| spec.initial[i][s[i]]).product()).collect();
        let pol = states
            .iter()
            .map(|s| actions.iter().map(|a| (0..n).map(|i| policy.rows[i][s[i]][a[i]]).product()).collect())
            .collect();
        let mut next = vec![vec![Vec::new(); na]; ns];
        let mut rew = vec![vec![Vec::new(); na]; ns];
        for (si, s) in states.iter().enumerate() {
            for (ai, a) in actions.iter().enumerate() {
                rew[si][ai] = reward(s, a);
                let rows: Vec<&[f64]> = (0..n).map(|i| spec.transition(i, s[i], a)).collect();
                for (ti, t) in states.iter().enumerate() {
                    let p: f64 = (0..n).map(|i| rows[i][t[i]]).product();
                    if p > 0.0 {
                        next[si][ai].push((ti, p));
                    }
                }
            }
        }
        Self { initial, policy: pol, next, reward: rew }
    }

    fn dp(&self, gamma: f64, horizon: usize, width: usize) -> Vec<f64> {
        let ns = self.initial.len();
        let mut v = vec![vec![0.0; width]; ns];
        for _ in 0..horizon {
            let mut nv = vec![vec![0.0; width]; ns];
            for s in 0..ns {
                for (a, &pa) in self.policy[s].iter().enumerate() {
                    if pa == 0.0 {
                        continue;
                    }
                    for i in 0..width {
                        let future: f64 = self.next[s][a].iter().map(|&(t, p)| p * v[t][i]).sum();
                        nv[s][i] += pa * (self.reward[s][a][i] + gamma * future);
                    }
                }
            }
            v = nv;
        }
        (0..width).map(|i| self.initial.iter().zip(&v).map(|(p, row)| p * row[i]).sum()).collect()
    }

    fn enumerate(&self, gamma: f64, horizon: usize, width: usize) -> Vec<f64> {
        let mut total = vec![0.0; width];
        for (s, &p) in self.initial.iter().enumerate() {
            if p > 0.0 {
                self.walk(s, p, 0, gamma, horizon, &mut total);
            }
        }
        total
    }

    fn walk(&self, s: usize, prob: f64, t: usize, gamma: f64, horizon: usize, total: &mut [f64]) {
        if t == horizon {
            return;
        }
        let disc = gamma.powi(t as i32);
        for (a, &pa) in self.policy[s].iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            let w = prob * pa;
            for (acc, r) in total.iter_mut().zip(&self.reward[s][a]) {
                *acc += w * disc * r;
            }
            for &(next, p) in &self.next[s][a] {
                self.walk(next, w * p, t + 1, gamma, horizon, total);
            }
        }
    }
}

/// How values are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    DynamicProgramming,
    Enumeration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueReport {
    /// One entry per node; exact values are zero at non-sinks.
    pub values: Vec<f64>,
    pub tail_bound: f64,
}

impl ValueReport {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn check_gamma(gamma: f64) -> Result<(), TheoryError> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(TheoryError::Gamma)
    }
}

fn trajectory_count(spec: &MicroSpec, horizon: usize) -> u64 {
    let j = Joint::new(spec);
    let per_step = (j.state_count() * j.action_count()) as u64;
    let mut c: u64 = 1;
    for _ in 0..horizon {
        c = c.saturating_mul(per_step);
    }
    c
}

fn evaluate(
    spec: &MicroSpec,
    policy: &TabularPolicy,
    gamma: f64,
    horizon: usize,
    method: Method,
    reward: &RewardFn<'_>,
) -> Result<Vec<f64>, TheoryError> {
    spec.validate()?;
    policy.check(spec)?;
    check_gamma(gamma)?;
    let width = spec.n_states.len();
    if method == Method::Enumeration {
        let count = trajectory_count(spec, horizon);
        if count > MAX_TRAJECTORIES {
            return Err(TheoryError::StateSpaceTooLarge(count));
        }
    }
    let model = Model::build(spec, policy, reward);
    Ok(match method {
        Method::DynamicProgramming => model.dp(gamma, horizon, width),
        Method::Enumeration => model.enumerate(gamma, horizon, width),
    })
}

pub fn exact_values(
    spec: &MicroSpec,
    policy: &TabularPolicy,
    gamma: f64,
    horizon: usize,
    method: Method,
) -> Result<ValueReport, TheoryError> {
    let n = spec.n_states.len();
    let reward = |s: &[usize], a: &[usize]| {
        (0..n)
            .map(|k| if spec.topology.is_sink(NodeId(k)) { spec.sink_reward(k, s[k], a) } else { 0.0 })
            .collect()
    };
    let values = evaluate(spec, policy, gamma, horizon, method, &reward)?;
    Ok(ValueReport { values, tail_bound: spec.tail_bound(gamma, horizon) })
}

pub fn synthetic_values(
    spec: &MicroSpec,
    policy: &TabularPolicy,
    f: &ContributionFunction,
    gamma: f64,
    horizon: usize,
    method: Method,
) -> Result<ValueReport, TheoryError> {
    f.check(spec)?;
    let n = spec.n_states.len();
    let reward = |s: &[usize], a: &[usize]| {
        let mut sr = vec![0.0; n];
        for k in spec.topology.sinks() {
            let k = k.index();
            let r = spec.sink_reward(k, s[k], a);
            let u = tuple_index(spec, k, s, a);
            for (m, i) in spec.delta(k).iter().enumerate() {
                sr[i.index()] += f.tables[k][m][u] * r;
            }
        }
        sr
    };
    let values = evaluate(spec, policy, gamma, horizon, method, &reward)?;
    Ok(ValueReport { values, tail_bound: spec.tail_bound(gamma, horizon) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    pub synthetic_total: f64,
    pub exact_total: f64,
    /// `exact_total − synthetic_total`.
    pub slack: f64,
    pub tolerance: f64,
    pub holds: bool,
    /// Every contribution row sums to one, so the two sides should agree.
    pub tight: bool,
}

pub fn verify_theorem1(
    spec: &MicroSpec,
    policy: &TabularPolicy,
    f: &ContributionFunction,
    gamma: f64,
    horizon: usize,
) -> Result<Theorem1Report, TheoryError> {
    for k in spec.topology.sinks() {
        if let Some(&r) = spec.rewards[k.index()].iter().find(|r| **r < 0.0) {
            return Err(TheoryError::HypothesisViolated { sink: k.index(), reward: r });
        }
    }
    let exact = exact_values(spec, policy, gamma, horizon, Method::DynamicProgramming)?;
    let synth = synthetic_values(spec, policy, f, gamma, horizon, Method::DynamicProgramming)?;
    let (lhs, rhs) = (synth.total(), exact.total());
    let tolerance = 2.0 * exact.tail_bound + 1e-9;
    Ok(Theorem1Report {
        synthetic_total: lhs,
        exact_total: rhs,
        slack: rhs - lhs,
        tolerance,
        holds: lhs <= rhs + tolerance,
        tight: f.is_tight(),
    })
}

/// Smallest horizon with `tail_bound ≤ tolerance`.
pub fn horizon_for(spec: &MicroSpec, gamma: f64, tolerance: f64) -> usize {
    let mut h = 1;
    while spec.tail_bound(gamma, h) > tolerance && h < 100_000 {
        h += 1;
    }
    h
}

/// Random DAG on at most three nodes.
pub fn random_micro_topology<R: Rng + ?Sized>(rng: &mut R) -> DagTopology {
    let n = rng.random_range(1..=3usize);
    let arcs: Vec<(usize, usize)> =
        (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).filter(|_| rng.random_bool(0.6)).collect();
    DagTopology::new(n, &arcs).expect("forward arcs are acyclic")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    pub trials: usize,
    pub failures: usize,
    /// Largest `synthetic − exact` seen (negative when every trial holds).
    pub max_violation: f64,
    pub tightest_slack: f64,
    /// Largest `|synthetic − exact|` over tight trials.
    pub max_tight_gap: f64,
}

/// Random environments, policies and admissible contributions.
pub fn run_campaign(trials: usize, seed: u64, gamma: f64, tolerance: f64) -> Result<CampaignReport, TheoryError> {
    let mut rng = stream(seed, "theory/campaign");
    let mut report = CampaignReport {
        trials,
        failures: 0,
        max_violation: f64::NEG_INFINITY,
        tightest_slack: f64::INFINITY,
        max_tight_gap: 0.0,
    };
    for t in 0..trials {
        let topology = random_micro_topology(&mut rng);
        let spec = MicroSpec::random(topology, 1, &mut rng)?;
        let horizon = horizon_for(&spec, gamma, tolerance);
        let policy = TabularPolicy::random(&spec, &mut rng);
        let f = sample_admissible_contribution(&spec, t % 5 == 0, &mut rng);
        let r = verify_theorem1(&spec, &policy, &f, gamma, horizon)?;
        if !r.holds {
            report.failures += 1;
        }
        report.max_violation = report.max_violation.max(-r.slack);
        report.tightest_slack = report.tightest_slack.min(r.slack);
        if r.tight {
            report.max_tight_gap = report.max_tight_gap.max(r.slack.abs());
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_both_one() -> MicroSpec {
        // node 0 → node 1; reward 1 at the sink iff both act 1
        MicroSpec {
            topology: DagTopology::new(2, &[(0, 1)]).unwrap(),
            n_states: vec![1, 1],
            n_actions: vec![2, 2],
            initial: vec![vec![1.0], vec![1.0]],
            transitions: vec![vec![vec![1.0]; 2], vec![vec![1.0]; 4]],
            rewards: vec![vec![], vec![0.0, 0.0, 0.0, 1.0]],
            horizon: 10,
            goal_period: 1,
        }
    }

    #[test]
    fn geometric_series() {
        let spec = MicroSpec::constant(1.0, 50);
        let pol = TabularPolicy::deterministic(&spec, &[0]);
        let r = exact_values(&spec, &pol, 0.9, 50, Method::DynamicProgramming).unwrap();
        assert!((r.values[0] - 10.0).abs() <= r.tail_bound + 1e-12);
        assert!((r.tail_bound - 0.9f64.powi(50) * 10.0).abs() < 1e-15);
        let zero = MicroSpec::constant(0.0, 5);
        let r = exact_values(&zero, &pol, 0.9, 5, Method::Enumeration).unwrap();
        assert_eq!(r.values, vec![0.0]);
    }

    #[test]
    fn chain_reward_needs_both_actions() {
        let spec = chain_both_one();
        let ones = TabularPolicy::deterministic(&spec, &[1, 1]);
        let h = horizon_for(&spec, 0.9, 1e-9);
        let r = exact_values(&spec, &ones, 0.9, h, Method::DynamicProgramming).unwrap();
        assert!((r.values[1] - 10.0).abs() <= 1e-9);
        let mixed = TabularPolicy::deterministic(&spec, &[1, 0]);
        assert_eq!(exact_values(&spec, &mixed, 0.9, h, Method::DynamicProgramming).unwrap().values, vec![0.0, 0.0]);
        // enumeration by hand at H = 3 with a coin-flip source: 0.5·(1 + 0.9 + 0.81)
        let mut coin = ones.clone();
        coin.rows[0][0] = vec![0.5, 0.5];
        let e = exact_values(&spec, &coin, 0.9, 3, Method::Enumeration).unwrap();
        assert!((e.values[1] - 0.5 * 2.71).abs() < 1e-12);
    }

    #[test]
    fn synthetic_identities() {
        let spec = MicroSpec::constant(1.0, 40);
        let pol = TabularPolicy::deterministic(&spec, &[0]);
        let keep = ContributionFunction::sink_keeps_all(&spec);
        let v = exact_values(&spec, &pol, 0.9, 40, Method::DynamicProgramming).unwrap();
        let s = synthetic_values(&spec, &pol, &keep, 0.9, 40, Method::DynamicProgramming).unwrap();
        assert_eq!(s.values, v.values);

        let chain = chain_both_one();
        let pol = TabularPolicy::deterministic(&chain, &[1, 1]);
        let zero = ContributionFunction::uniform(&chain, 0.0);
        let s = synthetic_values(&chain, &pol, &zero, 0.9, 30, Method::DynamicProgramming).unwrap();
        assert_eq!(s.values, vec![0.0, 0.0]);
        let half = ContributionFunction::uniform(&chain, 0.5);
        let v = exact_values(&chain, &pol, 0.9, 30, Method::DynamicProgramming).unwrap();
        let s = synthetic_values(&chain, &pol, &half, 0.9, 30, Method::DynamicProgramming).unwrap();
        assert!((s.values[0] - v.values[1] / 2.0).abs() < 1e-12);
        assert!((s.values[1] - v.values[1] / 2.0).abs() < 1e-12);
    }

    #[test]
    fn theorem_equality_and_linearity() {
        let spec = MicroSpec::constant(1.0, 40);
        let pol = TabularPolicy::deterministic(&spec, &[0]);
        let keep = ContributionFunction::sink_keeps_all(&spec);
        let r = verify_theorem1(&spec, &pol, &keep, 0.9, 200).unwrap();
        assert!(r.holds && r.tight);
        assert!(r.slack.abs() < 1e-9);

        let mut rng = stream(5, "lin");
        let g = DagTopology::new(3, &[(0, 2), (1, 2)]).unwrap();
        let spec = MicroSpec::random(g, 1, &mut rng).unwrap();
        let pol = TabularPolicy::random(&spec, &mut rng);
        let f = sample_admissible_contribution(&spec, false, &mut rng);
        let full = verify_theorem1(&spec, &pol, &f, 0.9, 60).unwrap();
        let half = verify_theorem1(&spec, &pol, &f.scaled(0.5), 0.9, 60).unwrap();
        assert!((half.synthetic_total - 0.5 * full.synthetic_total).abs() < 1e-12);
        assert!(half.slack >= full.slack);
    }

    #[test]
    fn errors() {
        let mut spec = MicroSpec::constant(-1.0, 4);
        let pol = TabularPolicy::deterministic(&spec, &[0]);
        let keep = ContributionFunction::sink_keeps_all(&spec);
        assert!(matches!(verify_theorem1(&spec, &pol, &keep, 0.9, 4), Err(TheoryError::HypothesisViolated { .. })));
        spec.rewards[0][0] = 1.0;
        let over = ContributionFunction::uniform(&spec, 1.5);
        assert!(matches!(
            synthetic_values(&spec, &pol, &over, 0.9, 4, Method::DynamicProgramming),
            Err(TheoryError::InadmissibleContribution { .. })
        ));
        let g = DagTopology::new(3, &[(0, 1), (1, 2)]).unwrap();
        let mut rng = stream(0, "big");
        let mut spec = MicroSpec::random(g, 1, &mut rng).unwrap();
        while spec.n_states.iter().product::<usize>() < 8 {
            spec = MicroSpec::random(spec.topology.clone(), 1, &mut rng).unwrap();
        }
        let pol = TabularPolicy::random(&spec, &mut rng);
        assert!(matches!(exact_values(&spec, &pol, 0.9, 50, Method::Enumeration), Err(TheoryError::StateSpaceTooLarge(_))));
        assert_eq!(exact_values(&spec, &pol, 1.0, 5, Method::DynamicProgramming), Err(TheoryError::Gamma));
    }

    #[test]
    fn sampled_contributions_are_admissible() {
        let mut rng = stream(9, "adm");
        let g = DagTopology::new(3, &[(0, 1), (0, 2), (1, 2)]).unwrap();
        let spec = MicroSpec::random(g, 1, &mut rng).unwrap();
        let a = sample_admissible_contribution(&spec, false, &mut stream(1, "f"));
        let b = sample_admissible_contribution(&spec, false, &mut stream(2, "f"));
        a.check(&spec).unwrap();
        b.check(&spec).unwrap();
        assert_ne!(a, b);
        let tight = sample_admissible_contribution(&spec, true, &mut rng);
        tight.check(&spec).unwrap();
        assert!(tight.is_tight());
    }

    #[test]
    fn campaign_holds() {
        let r = run_campaign(200, 7, 0.9, 1e-6).unwrap();
        assert_eq!(r.failures, 0, "{r:?}");
        assert!(r.max_tight_gap < 1e-9, "{r:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn dp_matches_enumeration(seed in any::<u64>(), horizon in 1usize..4) {
                let mut rng = stream(seed, "dp-enum");
                let spec = MicroSpec::random(random_micro_topology(&mut rng), 1, &mut rng).unwrap();
                let pol = TabularPolicy::random(&spec, &mut rng);
                let f = sample_admissible_contribution(&spec, false, &mut rng);
                if trajectory_count(&spec, horizon) <= MAX_TRAJECTORIES {
                    let a = exact_values(&spec, &pol, 0.9, horizon, Method::DynamicProgramming).unwrap();
                    let b = exact_values(&spec, &pol, 0.9, horizon, Method::Enumeration).unwrap();
                    let c = synthetic_values(&spec, &pol, &f, 0.9, horizon, Method::DynamicProgramming).unwrap();
                    let d = synthetic_values(&spec, &pol, &f, 0.9, horizon, Method::Enumeration).unwrap();
                    for (x, y) in a.values.iter().zip(&b.values).chain(c.values.iter().zip(&d.values)) {
                        prop_assert!((x - y).abs() <= 1e-9, "{} vs {}", x, y);
                    }
                }
            }
        }
    }
}
