//! Training loop for leader, reward generator-distributor and followers,
//! plus the baseline run modes.
//!
//! An episode is split into goal periods of `D` steps. At the start of a
//! period the leader emits one goal per follower; followers act on their
//! observation augmented with their goal; once the period ends the RGD looks
//! at the sampled global states and hands out synthetic rewards that flow
//! from the sinks back to the sources.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::env::{EnvContract, EnvError, EnvKind, Environment};
use crate::nn::{Action, PolicyHead};
use crate::ppo::{PpoConfig, PpoError, PpoLearner, TrajectoryBatch, Transition};
use crate::reward_flow::{distribute, synthetic_budget, RewardBaseline, RewardFlowError, RgdOutput};
use crate::rng::{derive_seed, stream, StreamRng};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("expected input of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("checkpoint does not match the environment: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    RewardFlow(#[from] RewardFlowError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OrchestratorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RunMode {
    /// One agent acting for every node on the global state.
    Gs,
    /// Independent followers sharing the team reward.
    Srm,
    /// Followers plus leader goals.
    Lfm,
    /// Followers plus synthetic rewards.
    Rfm,
    /// Leader, reward generator-distributor and followers.
    Proposed,
    DiffM,
    CapM,
}

impl RunMode {
    pub const ALL: [RunMode; 7] =
        [RunMode::Gs, RunMode::Srm, RunMode::Lfm, RunMode::Rfm, RunMode::Proposed, RunMode::DiffM, RunMode::CapM];

    pub fn name(self) -> &'static str {
        match self {
            RunMode::Gs => "gs",
            RunMode::Srm => "srm",
            RunMode::Lfm => "lfm",
            RunMode::Rfm => "rfm",
            RunMode::Proposed => "proposed",
            RunMode::DiffM => "diff_m",
            RunMode::CapM => "cap_m",
        }
    }

    pub fn uses_leader(self) -> bool {
        matches!(self, RunMode::Lfm | RunMode::Proposed)
    }

    pub fn uses_rgd(self) -> bool {
        matches!(self, RunMode::Rfm | RunMode::Proposed)
    }

    pub fn shaping(self) -> Shaping {
        match self {
            RunMode::DiffM => Shaping::Difference,
            RunMode::CapM => Shaping::CounterfactualPotential,
            _ => Shaping::SharedTeam,
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RunMode {
    type Err = OrchestratorError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        RunMode::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| OrchestratorError::Config(format!("unknown mode `{s}`")))
    }
}

/// How the per-step follower reward is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shaping {
    SharedTeam,
    Difference,
    CounterfactualPotential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: RunMode,
    pub seed: u64,
    pub episodes: usize,
    pub ppo: PpoConfig,
    pub hidden: Vec<usize>,
    /// Goal dimension per follower.
    pub goal_dim: usize,
    /// Global-state sampling stride inside a goal period.
    pub gsf_stride: usize,
    /// Append previous goals and synthetic rewards to the leader state.
    pub leader_full_state: bool,
    pub disable_leader: bool,
    pub disable_rgd: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Proposed,
            seed: 0,
            episodes: 100,
            ppo: PpoConfig::default(),
            hidden: vec![256, 256],
            goal_dim: 4,
            gsf_stride: 3,
            leader_full_state: false,
            disable_leader: false,
            disable_rgd: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.goal_dim == 0 {
            return Err(OrchestratorError::Config("goal_dim must be positive".into()));
        }
        if self.gsf_stride == 0 {
            return Err(OrchestratorError::Config("gsf_stride must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(OrchestratorError::Config("hidden layer widths must be positive".into()));
        }
        self.ppo.validate()?;
        Ok(())
    }

    pub fn leader_enabled(&self) -> bool {
        self.mode.uses_leader() && !self.disable_leader
    }

    pub fn rgd_enabled(&self) -> bool {
        self.mode.uses_rgd() && !self.disable_rgd
    }
}

/// Offsets inside a goal period at which the global state is sampled:
/// `0, k, 2k, …` up to `D − 1`, followed by the post-period state at `D`.
pub fn gsf_indices(period: usize, stride: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..period).step_by(stride.max(1)).collect();
    idx.push(period);
    idx
}

pub fn gsf_len(period: usize, stride: usize) -> usize {
    gsf_indices(period, stride).len()
}

/// Per-step follower rewards for one goal period: an equal share of the
/// team reward each step, plus the synthetic reward on the last step.
/// Returns `[follower][step]`.
pub fn compose_follower_rewards(team: &[f64], synthetic: &[f64], followers: usize) -> Vec<Vec<f64>> {
    let n = followers.max(1) as f64;
    (0..followers)
        .map(|i| {
            let mut stream: Vec<f64> = team.iter().map(|r| r / n).collect();
            if let (Some(last), Some(sr)) = (stream.last_mut(), synthetic.get(i)) {
                *last += sr;
            }
            stream
        })
        .collect()
}

/// Potential-based shaping terms `F_t = γ·Φ_{t+1} − Φ_t`, with the
/// potential after the final step taken as 0.
pub fn cap_shaping(potentials: &[f64], gamma: f64) -> Vec<f64> {
    (0..potentials.len())
        .map(|t| gamma * potentials.get(t + 1).copied().unwrap_or(0.0) - potentials[t])
        .collect()
}

/// Team reward of `actions` minus the team reward with each agent's action
/// replaced by `default_action`, all from the current state. The environment
/// is left in the successor state of the true joint action.
pub fn difference_rewards(
    env: &mut dyn Environment,
    actions: &[usize],
    default_action: usize,
) -> Result<(crate::env::StepOutput, Vec<f64>)> {
    let snapshot = env.snapshot();
    let mut counterfactual = Vec::with_capacity(actions.len());
    for i in 0..actions.len() {
        if actions[i] == default_action {
            counterfactual.push(None);
            continue;
        }
        let mut alt = actions.to_vec();
        alt[i] = default_action;
        let r = env.step(&alt)?.team_reward;
        env.restore(&snapshot)?;
        counterfactual.push(Some(r));
    }
    let out = env.step(actions)?;
    let diffs = counterfactual.iter().map(|c| c.map_or(0.0, |r| out.team_reward - r)).collect();
    Ok((out, diffs))
}

/// Difference reward of a single agent.
pub fn difference_reward(env: &mut dyn Environment, actions: &[usize], agent: usize, default_action: usize) -> Result<f64> {
    if agent >= actions.len() {
        return Err(OrchestratorError::DimensionMismatch { expected: actions.len(), got: agent + 1 });
    }
    let snapshot = env.snapshot();
    let r = env.step(actions)?.team_reward;
    env.restore(&snapshot)?;
    if actions[agent] == default_action {
        return Ok(0.0);
    }
    let mut alt = actions.to_vec();
    alt[agent] = default_action;
    let r_alt = env.step(&alt)?.team_reward;
    env.restore(&snapshot)?;
    Ok(r - r_alt)
}

/// Every learner of a run. Roles absent from the mode are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Agents {
    pub followers: Vec<PpoLearner>,
    pub global: Option<PpoLearner>,
    pub leader: Option<PpoLearner>,
    pub generator: Option<PpoLearner>,
    pub distributor: Option<PpoLearner>,
}

struct Dims {
    followers: Vec<usize>,
    global: usize,
    leader: usize,
    rgd: usize,
}

fn dims(contract: &EnvContract, cfg: &TrainConfig) -> Dims {
    let n = contract.node_count();
    let goal = if cfg.leader_enabled() { cfg.goal_dim } else { 0 };
    let extra = if cfg.leader_full_state { n * cfg.goal_dim + n } else { 0 };
    Dims {
        followers: contract.obs_dims.iter().map(|d| d + goal).collect(),
        global: contract.global_dim(),
        leader: contract.global_dim() + extra,
        rgd: gsf_len(contract.goal_period, cfg.gsf_stride) * contract.global_dim() + n * goal,
    }
}

impl Agents {
    pub fn new(contract: &EnvContract, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let d = dims(contract, cfg);
        let n = contract.node_count();
        let build = |name: &str, input: usize, head: PolicyHead| -> Result<PpoLearner> {
            let mut rng = stream(cfg.seed, &format!("init/{name}"));
            Ok(PpoLearner::new(input, &cfg.hidden, head, cfg.ppo.clone(), &mut rng)?)
        };
        let mut agents = Agents { followers: Vec::new(), global: None, leader: None, generator: None, distributor: None };
        if cfg.mode == RunMode::Gs {
            let head = PolicyHead::MultiCategorical { sizes: contract.action_sizes.clone() };
            agents.global = Some(build("global", d.global, head)?);
            return Ok(agents);
        }
        for i in 0..n {
            let head = PolicyHead::Categorical { actions: contract.action_sizes[i] };
            agents.followers.push(build(&format!("follower/{i}"), d.followers[i], head)?);
        }
        if cfg.leader_enabled() {
            agents.leader = Some(build("leader", d.leader, PolicyHead::Beta { dim: n * cfg.goal_dim })?);
        }
        if cfg.rgd_enabled() {
            agents.generator = Some(build("rgd_generator", d.rgd, PolicyHead::Beta { dim: 1 })?);
            let dist_head = PolicyHead::Beta { dim: n + contract.topology.arc_count() };
            agents.distributor = Some(build("rgd_distributor", d.rgd, dist_head)?);
        }
        Ok(agents)
    }

    /// `(file stem, learner)` for every present role.
    pub fn roles(&self) -> Vec<(String, &PpoLearner)> {
        let mut out: Vec<(String, &PpoLearner)> =
            self.followers.iter().enumerate().map(|(i, l)| (format!("follower_{i}"), l)).collect();
        for (name, l) in [
            ("global", &self.global),
            ("leader", &self.leader),
            ("rgd_generator", &self.generator),
            ("rgd_distributor", &self.distributor),
        ] {
            if let Some(l) = l {
                out.push((name.to_string(), l));
            }
        }
        out
    }

    fn roles_mut(&mut self) -> Vec<(String, &mut PpoLearner)> {
        let mut out: Vec<(String, &mut PpoLearner)> =
            self.followers.iter_mut().enumerate().map(|(i, l)| (format!("follower/{i}"), l)).collect();
        for (name, l) in [
            ("global", &mut self.global),
            ("leader", &mut self.leader),
            ("rgd_generator", &mut self.generator),
            ("rgd_distributor", &mut self.distributor),
        ] {
            if let Some(l) = l.as_mut() {
                out.push((name.to_string(), l));
            }
        }
        out
    }

    /// Writes one `<role>.ckpt` per learner into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, l) in self.roles() {
            l.save(&dir.join(format!("{name}.ckpt")))?;
        }
        Ok(())
    }

    /// Loads the learners the configured mode needs from `dir` and checks
    /// their shapes against the environment.
    pub fn load(dir: &Path, contract: &EnvContract, cfg: &TrainConfig) -> Result<Self> {
        let mut agents = Agents::new(contract, cfg)?;
        let load_into = |name: &str, slot: &mut PpoLearner| -> Result<()> {
            let path = dir.join(format!("{name}.ckpt"));
            let loaded = PpoLearner::load(&path, cfg.ppo.clone())?;
            if loaded.input_dim() != slot.input_dim() || loaded.head != slot.head {
                return Err(OrchestratorError::CheckpointMismatch(format!(
                    "{name}: input {} head {:?}, expected input {} head {:?}",
                    loaded.input_dim(),
                    loaded.head,
                    slot.input_dim(),
                    slot.head
                )));
            }
            *slot = loaded;
            Ok(())
        };
        for (i, f) in agents.followers.iter_mut().enumerate() {
            load_into(&format!("follower_{i}"), f)?;
        }
        for (name, slot) in [
            ("global", &mut agents.global),
            ("leader", &mut agents.leader),
            ("rgd_generator", &mut agents.generator),
            ("rgd_distributor", &mut agents.distributor),
        ] {
            if let Some(slot) = slot.as_mut() {
                load_into(name, slot)?;
            }
        }
        Ok(agents)
    }
}

/// Per-episode summary written to the log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub team_reward: f64,
    pub steps: usize,
    pub goal_periods: usize,
    /// Undiscounted reward each follower received (shares, shaping and
    /// synthetic rewards together).
    pub follower_rewards: Vec<f64>,
    pub synthetic_rewards: Vec<f64>,
    pub budget: f64,
}

#[derive(Debug, Clone, Default)]
struct EpisodeBatches {
    followers: Vec<TrajectoryBatch>,
    global: TrajectoryBatch,
    leader: TrajectoryBatch,
    generator: TrajectoryBatch,
    distributor: TrajectoryBatch,
}

/// Random streams used while acting.
pub struct ActStreams {
    followers: Vec<StreamRng>,
    global: StreamRng,
    leader: StreamRng,
    rgd: StreamRng,
}

impl ActStreams {
    pub fn new(seed: u64, followers: usize) -> Self {
        Self {
            followers: (0..followers).map(|i| stream(seed, &format!("act/follower/{i}"))).collect(),
            global: stream(seed, "act/global"),
            leader: stream(seed, "act/leader"),
            rgd: stream(seed, "act/rgd"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

struct Actor<'a> {
    mode: ActMode,
    learner: &'a PpoLearner,
}

impl Actor<'_> {
    fn act(&self, state: &[f64], rng: &mut StreamRng) -> Result<(Action, f64, f64)> {
        if state.len() != self.learner.input_dim() {
            return Err(OrchestratorError::DimensionMismatch { expected: self.learner.input_dim(), got: state.len() });
        }
        Ok(match self.mode {
            ActMode::Sample => {
                let out = self.learner.act(state, rng)?;
                (out.action, out.log_prob, out.value)
            }
            ActMode::Greedy => (self.learner.act_greedy(state)?, 0.0, 0.0),
        })
    }
}

fn transition(state: Vec<f64>, (action, log_prob, value): (Action, f64, f64)) -> Transition {
    Transition { state, action, log_prob, reward: 0.0, value, terminal: false }
}

fn continuous(action: &Action) -> Vec<f64> {
    action.as_continuous().map(<[f64]>::to_vec).unwrap_or_default()
}

/// One environment period of `D` steps (fewer if the episode ends first).
pub struct PeriodOutcome {
    pub team_rewards: Vec<f64>,
    /// Global states at the offsets from [`gsf_indices`], padded with the
    /// final state when the episode ended early.
    pub gsf: Vec<Vec<f64>>,
}

struct EpisodeRunner<'a> {
    agents: &'a Agents,
    cfg: &'a TrainConfig,
    mode: ActMode,
    baseline: RewardBaseline,
}

impl EpisodeRunner<'_> {
    fn actor<'b>(&self, learner: &'b PpoLearner) -> Actor<'b> {
        Actor { mode: self.mode, learner }
    }

    /// Runs the period, recording follower (or global-agent) transitions.
    /// Follower rewards are left at the shaping-specific base value; the
    /// caller adds synthetic rewards.
    fn run_goal_period(
        &self,
        env: &mut dyn Environment,
        goals: &[f64],
        streams: &mut ActStreams,
        batches: &mut EpisodeBatches,
        potentials: &mut [Vec<f64>],
    ) -> Result<PeriodOutcome> {
        let contract = env.contract().clone();
        let n = contract.node_count();
        let period = contract.goal_period;
        let shaping = self.cfg.mode.shaping();
        let mut team_rewards = Vec::with_capacity(period);
        let mut gsf = Vec::new();
        for d in 0..period {
            if env.is_done() {
                break;
            }
            if d % self.cfg.gsf_stride == 0 {
                gsf.push(env.global_state());
            }
            let actions: Vec<usize> = if let Some(global) = &self.agents.global {
                let state = env.global_state();
                let out = self.actor(global).act(&state, &mut streams.global)?;
                let joint = match &out.0 {
                    Action::MultiDiscrete(a) => a.clone(),
                    other => unreachable!("global agent produced {other:?}"),
                };
                batches.global.push(transition(state, out));
                joint
            } else {
                let obs = env.observations();
                let mut joint = Vec::with_capacity(n);
                for (i, o) in obs.into_iter().enumerate() {
                    let mut state = o;
                    if !goals.is_empty() {
                        state.extend_from_slice(&goals[i * self.cfg.goal_dim..(i + 1) * self.cfg.goal_dim]);
                    }
                    let out = self.actor(&self.agents.followers[i]).act(&state, &mut streams.followers[i])?;
                    joint.push(out.0.as_discrete().expect("categorical head"));
                    batches.followers[i].push(transition(state, out));
                }
                joint
            };
            let (out, diffs) = match shaping {
                Shaping::SharedTeam => (env.step(&actions)?, None),
                _ => {
                    let (out, diffs) = difference_rewards(env, &actions, 0)?;
                    (out, Some(diffs))
                }
            };
            let r = out.team_reward;
            team_rewards.push(r);
            if let Some(t) = batches.global.transitions.last_mut().filter(|_| self.agents.global.is_some()) {
                t.reward = r;
            }
            for i in 0..batches.followers.len() {
                let t = batches.followers[i].transitions.last_mut().expect("pushed above");
                t.reward = match (&diffs, shaping) {
                    (Some(d), Shaping::Difference) => d[i],
                    (Some(d), _) => {
                        potentials[i].push(d[i]);
                        r / n as f64
                    }
                    (None, _) => r / n as f64,
                };
            }
        }
        gsf.push(env.global_state());
        let want = gsf_len(period, self.cfg.gsf_stride);
        while gsf.len() < want {
            let last = gsf.last().expect("non-empty").clone();
            gsf.insert(gsf.len() - 1, last);
        }
        Ok(PeriodOutcome { team_rewards, gsf })
    }

    fn play(&self, env: &mut dyn Environment, env_seed: u64, streams: &mut ActStreams) -> Result<(EpisodeLog, EpisodeBatches)> {
        let contract = env.contract().clone();
        let n = contract.node_count();
        let m = self.cfg.goal_dim;
        env.reset(env_seed);
        let mut batches = EpisodeBatches {
            followers: vec![TrajectoryBatch::default(); self.agents.followers.len()],
            ..EpisodeBatches::default()
        };
        let mut potentials = vec![Vec::new(); self.agents.followers.len()];
        let mut prev_goals = vec![0.0; n * m];
        let mut prev_sr = vec![0.0; n];
        let mut team_total = 0.0;
        let mut steps = 0;
        let mut periods = 0;
        let mut sr_sums = vec![0.0; self.agents.followers.len()];
        let mut budget_sum = 0.0;
        let mut rgd_pending = false;

        while !env.is_done() {
            let goals = match &self.agents.leader {
                Some(leader) => {
                    let mut state = env.global_state();
                    if self.cfg.leader_full_state {
                        state.extend_from_slice(&prev_goals);
                        state.extend_from_slice(&prev_sr);
                    }
                    let out = self.actor(leader).act(&state, &mut streams.leader)?;
                    let goals = continuous(&out.0);
                    batches.leader.push(transition(state, out));
                    goals
                }
                None => Vec::new(),
            };
            let starts: Vec<usize> = batches.followers.iter().map(TrajectoryBatch::len).collect();
            let outcome = self.run_goal_period(env, &goals, streams, &mut batches, &mut potentials)?;
            if outcome.team_rewards.is_empty() {
                break;
            }
            let period_reward: f64 = outcome.team_rewards.iter().sum();
            team_total += period_reward;
            steps += outcome.team_rewards.len();
            periods += 1;
            if let Some(t) = batches.leader.transitions.last_mut() {
                t.reward = period_reward;
            }
            if rgd_pending {
                batches.generator.transitions.last_mut().expect("pending").reward = period_reward;
                batches.distributor.transitions.last_mut().expect("pending").reward = period_reward;
            }
            let sr = match (&self.agents.generator, &self.agents.distributor) {
                (Some(generator), Some(distributor)) => {
                    let mut state = outcome.gsf.concat();
                    state.extend_from_slice(&goals);
                    let q_out = self.actor(generator).act(&state, &mut streams.rgd)?;
                    let ve_out = self.actor(distributor).act(&state, &mut streams.rgd)?;
                    let q = continuous(&q_out.0)[0];
                    let ve = continuous(&ve_out.0);
                    let rgd = RgdOutput { q, node_values: ve[..n].to_vec(), arc_values: ve[n..].to_vec() };
                    let budget = synthetic_budget(q, &self.baseline);
                    budget_sum += budget;
                    batches.generator.push(transition(state.clone(), q_out));
                    batches.distributor.push(transition(state, ve_out));
                    rgd_pending = true;
                    distribute(&contract.topology, &rgd, budget)?.rewards
                }
                _ => vec![0.0; n],
            };
            for (i, b) in batches.followers.iter_mut().enumerate() {
                if b.len() > starts[i] {
                    b.transitions.last_mut().expect("non-empty").reward += sr[i];
                }
                sr_sums[i] += sr[i];
            }
            prev_goals = if goals.is_empty() { vec![0.0; n * m] } else { goals };
            prev_sr = sr;
        }

        if self.cfg.mode.shaping() == Shaping::CounterfactualPotential {
            for (b, phi) in batches.followers.iter_mut().zip(&potentials) {
                for (t, f) in b.transitions.iter_mut().zip(cap_shaping(phi, self.cfg.ppo.gamma)) {
                    t.reward += f;
                }
            }
        }
        let follower_rewards = batches.followers.iter().map(|b| b.transitions.iter().map(|t| t.reward).sum()).collect();
        for b in batches
            .followers
            .iter_mut()
            .chain([&mut batches.global, &mut batches.leader, &mut batches.generator, &mut batches.distributor])
        {
            if let Some(t) = b.transitions.last_mut() {
                t.terminal = true;
            }
        }
        let log = EpisodeLog {
            episode: 0,
            team_reward: team_total,
            steps,
            goal_periods: periods,
            follower_rewards,
            synthetic_rewards: sr_sums,
            budget: budget_sum,
        };
        Ok((log, batches))
    }
}

/// Environment seed of training episode `episode`.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    derive_seed(seed, &format!("env/episode/{episode}"))
}

/// Sequential trainer for one run.
pub struct Trainer {
    cfg: TrainConfig,
    env: Box<dyn Environment>,
    agents: Agents,
    baseline: RewardBaseline,
    streams: ActStreams,
    update_rngs: Vec<StreamRng>,
    episode: usize,
    skipped_updates: usize,
}

impl Trainer {
    pub fn new(env: Box<dyn Environment>, cfg: TrainConfig) -> Result<Self> {
        let agents = Agents::new(env.contract(), &cfg)?;
        Ok(Self::with_agents(env, cfg, agents))
    }

    pub fn from_kind(kind: &EnvKind, cfg: TrainConfig) -> Result<Self> {
        Self::new(kind.build()?, cfg)
    }

    pub fn with_agents(env: Box<dyn Environment>, cfg: TrainConfig, mut agents: Agents) -> Self {
        let n = env.contract().node_count();
        let update_rngs =
            agents.roles_mut().into_iter().map(|(name, _)| stream(cfg.seed, &format!("update/{name}"))).collect();
        Self {
            streams: ActStreams::new(cfg.seed, n),
            cfg,
            env,
            agents,
            baseline: RewardBaseline::default(),
            update_rngs,
            episode: 0,
            skipped_updates: 0,
        }
    }

    pub fn agents(&self) -> &Agents {
        &self.agents
    }

    pub fn into_agents(self) -> Agents {
        self.agents
    }

    pub fn baseline(&self) -> RewardBaseline {
        self.baseline
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn environment(&self) -> &dyn Environment {
        self.env.as_ref()
    }

    /// Updates aborted because the loss became non-finite.
    pub fn skipped_updates(&self) -> usize {
        self.skipped_updates
    }

    /// Plays one episode, then updates every learner on it and refreshes the
    /// reward baseline.
    pub fn run_episode(&mut self) -> Result<EpisodeLog> {
        let seed = episode_seed(self.cfg.seed, self.episode);
        let runner = EpisodeRunner { agents: &self.agents, cfg: &self.cfg, mode: ActMode::Sample, baseline: self.baseline };
        let (mut log, batches) = runner.play(self.env.as_mut(), seed, &mut self.streams)?;
        log.episode = self.episode;
        let EpisodeBatches { followers, global, leader, generator, distributor } = batches;
        let mut ordered: Vec<TrajectoryBatch> = followers;
        for (batch, present) in [
            (global, self.agents.global.is_some()),
            (leader, self.agents.leader.is_some()),
            (generator, self.agents.generator.is_some()),
            (distributor, self.agents.distributor.is_some()),
        ] {
            if present {
                ordered.push(batch);
            }
        }
        for (((_, learner), batch), rng) in self.agents.roles_mut().into_iter().zip(&ordered).zip(&mut self.update_rngs) {
            if batch.is_empty() {
                continue;
            }
            match learner.update(batch, rng) {
                Ok(_) => {}
                Err(PpoError::NonFiniteLoss) => self.skipped_updates += 1,
                Err(e) => return Err(e.into()),
            }
        }
        self.baseline.update(log.team_reward, log.goal_periods);
        self.episode += 1;
        Ok(log)
    }

    /// Runs the configured number of episodes.
    pub fn train(&mut self) -> Result<Vec<EpisodeLog>> {
        (0..self.cfg.episodes).map(|_| self.run_episode()).collect()
    }
}

/// Trains a fresh run and returns its log and final agents.
pub fn train(kind: &EnvKind, cfg: TrainConfig) -> Result<(Vec<EpisodeLog>, Agents)> {
    let mut trainer = Trainer::from_kind(kind, cfg)?;
    let logs = trainer.train()?;
    Ok((logs, trainer.into_agents()))
}

/// Plays one episode without learning.
pub fn play_episode(
    agents: &Agents,
    env: &mut dyn Environment,
    cfg: &TrainConfig,
    baseline: RewardBaseline,
    env_seed: u64,
    mode: ActMode,
) -> Result<EpisodeLog> {
    let runner = EpisodeRunner { agents, cfg, mode, baseline };
    let mut streams = ActStreams::new(env_seed, env.contract().node_count());
    Ok(runner.play(env, env_seed, &mut streams)?.0)
}

/// Plays one evaluation episode per seed in parallel; each worker owns its
/// environment. Results are in seed order.
pub fn evaluate(
    agents: &Agents,
    kind: &EnvKind,
    cfg: &TrainConfig,
    baseline: RewardBaseline,
    seeds: &[u64],
    mode: ActMode,
) -> Result<Vec<EpisodeLog>> {
    seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut env = kind.build()?;
            let mut log = play_episode(agents, env.as_mut(), cfg, baseline, seed, mode)?;
            log.episode = i;
            Ok(log)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{FactoryConfig, FactoryEnv, MicroSpec};
    use approx::assert_abs_diff_eq;

    fn small(mode: RunMode) -> TrainConfig {
        TrainConfig { mode, seed: 11, episodes: 2, hidden: vec![8], ..TrainConfig::default() }
    }

    fn small_factory() -> EnvKind {
        EnvKind::Factory(FactoryConfig { goal_periods: 2, period_length: 10 })
    }

    #[test]
    fn gsf_sizes() {
        assert_eq!(gsf_indices(10, 3), vec![0, 3, 6, 9, 10]);
        assert_eq!(gsf_len(10, 3), 5);
        assert_eq!(gsf_indices(1, 3), vec![0, 1]);
        for d in 1..30 {
            assert_eq!(gsf_len(d, 3), (d - 1) / 3 + 2);
        }
    }

    #[test]
    fn follower_rewards_split_equally() {
        let r = compose_follower_rewards(&[8.0, 4.0], &[0.0; 4], 4);
        assert!(r.iter().all(|s| s == &vec![2.0, 1.0]));
        let r = compose_follower_rewards(&[1.0, 1.0, 1.0], &[5.0, 0.0], 2);
        assert_eq!(r[0], vec![0.5, 0.5, 5.5]);
        assert_eq!(r[1], vec![0.5, 0.5, 0.5]);
        let r = compose_follower_rewards(&[0.0; 3], &[0.0; 3], 3);
        assert!(r.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn cap_shaping_constant_and_telescoping() {
        let f = cap_shaping(&[2.0; 5], 0.99);
        for x in &f[..4] {
            assert_abs_diff_eq!(*x, -0.02, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(f[4], -2.0, epsilon = 1e-12);
        assert!(cap_shaping(&[0.0; 4], 0.9).iter().all(|&x| x == 0.0));

        // Σ γ^t F_t = −Φ_0 when the terminal potential is 0
        let phi = [0.3, -1.2, 4.0, 0.7, 2.2];
        let g: f64 = 0.9;
        let discounted: f64 = cap_shaping(&phi, g).iter().enumerate().map(|(t, x)| g.powi(t as i32) * x).sum();
        assert_abs_diff_eq!(discounted, -phi[0], epsilon = 1e-12);
    }

    #[test]
    fn difference_reward_of_default_action_is_zero() {
        let mut env = FactoryEnv::new(FactoryConfig::default()).unwrap();
        env.reset(3);
        assert_eq!(difference_reward(&mut env, &[0, 1, 0, 2], 0, 0).unwrap(), 0.0);
        let (_, d) = difference_rewards(&mut env, &[0, 0, 0, 0], 0).unwrap();
        assert_eq!(d, vec![0.0; 4]);
    }

    #[test]
    fn difference_reward_of_sole_seller() {
        let mut env = FactoryEnv::new(FactoryConfig::default()).unwrap();
        env.reset(3);
        env.set_inventory([0, 0], 1, 0);
        env.set_market([4, 2, 3], [1, 0, 0]);
        // sells for 4 and avoids holding the level-two unit (0.8)
        let d = difference_reward(&mut env, &[0, 0, 0, 1], 3, 0).unwrap();
        assert_abs_diff_eq!(d, 4.8, epsilon = 1e-12);
        // producing at level one does not change this step's team reward by
        // more than its own holding cost
        let d0 = difference_reward(&mut env, &[1, 0, 0, 1], 0, 0).unwrap();
        assert_abs_diff_eq!(d0, -0.3, epsilon = 1e-12);
    }

    #[test]
    fn counterfactuals_do_not_leak() {
        let mut a = FactoryEnv::new(FactoryConfig::default()).unwrap();
        let mut b = FactoryEnv::new(FactoryConfig::default()).unwrap();
        a.reset(9);
        b.reset(9);
        for t in 0..60 {
            let actions = [t % 3, t % 2, (t / 2) % 2, t % 4];
            let (out, _) = difference_rewards(&mut a, &actions, 0).unwrap();
            let direct = b.step(&actions).unwrap();
            assert_eq!(out, direct);
            assert_eq!(a.snapshot(), b.snapshot());
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in RunMode::ALL {
            assert_eq!(m.name().parse::<RunMode>().unwrap(), m);
        }
        assert_eq!("DIFF-M".parse::<RunMode>().unwrap(), RunMode::DiffM);
        assert!("qmix".parse::<RunMode>().is_err());
    }

    #[test]
    fn srm_constant_reward_sums() {
        let kind = EnvKind::Micro(Box::new(MicroSpec::constant(1.5, 12)));
        let (logs, _) = train(&kind, small(RunMode::Srm)).unwrap();
        for log in logs {
            assert_eq!(log.steps, 12);
            assert_abs_diff_eq!(log.team_reward, 18.0, epsilon = 1e-12);
            assert_abs_diff_eq!(log.follower_rewards[0], 18.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn shared_stream_sums_to_team_reward() {
        let (logs, _) = train(&small_factory(), small(RunMode::Srm)).unwrap();
        for log in logs {
            assert_abs_diff_eq!(log.follower_rewards.iter().sum::<f64>(), log.team_reward, epsilon = 1e-9);
        }
    }

    #[test]
    fn first_proposed_episode_has_no_synthetic_reward() {
        let mut t = Trainer::from_kind(&small_factory(), small(RunMode::Proposed)).unwrap();
        let first = t.run_episode().unwrap();
        assert!(first.synthetic_rewards.iter().all(|&x| x == 0.0));
        assert_eq!(first.budget, 0.0);
        assert_eq!(first.goal_periods, 2);
        assert_eq!(t.agents().leader.as_ref().unwrap().input_dim(), 44);
        // five sampled states of 44 values plus 4 goals of 4
        assert_eq!(t.agents().generator.as_ref().unwrap().input_dim(), 5 * 44 + 16);
    }

    #[test]
    fn proposed_without_rgd_matches_lfm() {
        let kind = small_factory();
        let lfm = train(&kind, small(RunMode::Lfm)).unwrap();
        let reduced = train(&kind, TrainConfig { disable_rgd: true, ..small(RunMode::Proposed) }).unwrap();
        assert_eq!(lfm, reduced);
        let rfm = train(&kind, small(RunMode::Rfm)).unwrap();
        let reduced = train(&kind, TrainConfig { disable_leader: true, ..small(RunMode::Proposed) }).unwrap();
        assert_eq!(rfm, reduced);
    }

    #[test]
    fn every_mode_runs_and_is_deterministic() {
        let kind = small_factory();
        for mode in RunMode::ALL {
            let a = train(&kind, small(mode)).unwrap();
            let b = train(&kind, small(mode)).unwrap();
            assert_eq!(a, b, "{mode}");
            assert_eq!(a.0.len(), 2);
            assert_eq!(a.0[0].steps, 20);
            assert_eq!(a.0[0].follower_rewards.len(), a.0[0].synthetic_rewards.len());
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let kind = small_factory();
        let cfg = small(RunMode::Proposed);
        let (_, agents) = train(&kind, cfg.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        agents.save(dir.path()).unwrap();
        let env = kind.build().unwrap();
        let loaded = Agents::load(dir.path(), env.contract(), &cfg).unwrap();
        for ((_, a), (_, b)) in agents.roles().iter().zip(loaded.roles()) {
            assert_eq!(a.policy, b.policy);
            assert_eq!(a.value, b.value);
        }
        let wrong = TrainConfig { goal_dim: 3, ..cfg };
        assert!(matches!(
            Agents::load(dir.path(), env.contract(), &wrong),
            Err(OrchestratorError::CheckpointMismatch(_))
        ));
    }

    #[test]
    fn evaluation_is_order_independent() {
        let kind = small_factory();
        let cfg = small(RunMode::Srm);
        let (_, agents) = train(&kind, cfg.clone()).unwrap();
        let seeds = [1, 2, 3, 4];
        let all = evaluate(&agents, &kind, &cfg, RewardBaseline::default(), &seeds, ActMode::Sample).unwrap();
        let one = evaluate(&agents, &kind, &cfg, RewardBaseline::default(), &seeds[2..3], ActMode::Sample).unwrap();
        assert_eq!(all[2].team_reward, one[0].team_reward);
    }
}
