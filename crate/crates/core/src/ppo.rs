//! Clipped-surrogate PPO with GAE, one learner per agent.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::nn::{Action, Adam, AdamConfig, DenseNet, NnError, PolicyHead};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("empty trajectory batch")]
    EmptyBatch,
    #[error("non-finite loss, update aborted")]
    NonFiniteLoss,
    #[error("invalid PPO configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub batch_size: usize,
    pub epochs_per_update: usize,
    /// Global L2 clip applied separately to actor and critic gradients.
    pub max_grad_norm: Option<f64>,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            learning_rate: 1e-4,
            gamma: 0.99,
            gae_lambda: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
            batch_size: 256,
            epochs_per_update: 4,
            max_grad_norm: Some(0.5),
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon must be positive");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning_rate must be non-negative");
        }
        if self.batch_size == 0 || self.epochs_per_update == 0 {
            return bad("batch_size and epochs_per_update must be positive");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, ..AdamConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    /// Ends a trajectory segment; GAE does not bootstrap across it.
    pub terminal: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryBatch {
    pub transitions: Vec<Transition>,
    /// Value of the state after the last transition, used only if that
    /// transition is not terminal.
    pub bootstrap_value: f64,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        self.transitions.push(t);
    }

    pub fn clear(&mut self) {
        self.transitions.clear();
        self.bootstrap_value = 0.0;
    }
}

/// Returns `(advantages, returns)`.
pub fn compute_gae(batch: &TrajectoryBatch, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    if batch.is_empty() {
        return Err(PpoError::EmptyBatch);
    }
    let n = batch.len();
    let mut adv = vec![0.0; n];
    let mut next_value = batch.bootstrap_value;
    let mut next_adv = 0.0;
    for (t, tr) in batch.transitions.iter().enumerate().rev() {
        let live = if tr.terminal { 0.0 } else { 1.0 };
        let delta = tr.reward + gamma * next_value * live - tr.value;
        adv[t] = delta + gamma * lambda * live * next_adv;
        next_value = tr.value;
        next_adv = adv[t];
    }
    let returns = adv.iter().zip(&batch.transitions).map(|(a, tr)| a + tr.value).collect();
    Ok((adv, returns))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    pub action: Action,
    pub log_prob: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

/// Actor-critic pair with its optimisers.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoLearner {
    pub policy: DenseNet,
    pub value: DenseNet,
    pub head: PolicyHead,
    pub config: PpoConfig,
    policy_opt: Adam,
    value_opt: Adam,
}

fn clip_norm(grads: &mut [f64], max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max && norm > 0.0 {
            let s = max / norm;
            grads.iter_mut().for_each(|g| *g *= s);
        }
    }
}

impl PpoLearner {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        head: PolicyHead,
        config: PpoConfig,
        rng: &mut R,
    ) -> Result<Self, PpoError> {
        config.validate()?;
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(head.param_count());
        let mut policy = DenseNet::new(&dims, rng)?;
        // near-uniform initial policy
        policy.scale_output_layer(0.01);
        *dims.last_mut().expect("non-empty") = 1;
        let value = DenseNet::new(&dims, rng)?;
        Ok(Self::from_parts(policy, value, head, config))
    }

    pub fn from_parts(policy: DenseNet, value: DenseNet, head: PolicyHead, config: PpoConfig) -> Self {
        let policy_opt = Adam::new(policy.param_count(), config.adam());
        let value_opt = Adam::new(value.param_count(), config.adam());
        Self { policy, value, head, config, policy_opt, value_opt }
    }

    pub fn input_dim(&self) -> usize {
        self.policy.input_dim()
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<ActOutput, PpoError> {
        let params = self.policy.forward(state)?;
        let sample = self.head.sample(&params, rng)?;
        let value = self.value.forward(state)?[0];
        Ok(ActOutput { action: sample.action, log_prob: sample.log_prob, value })
    }

    pub fn act_greedy(&self, state: &[f64]) -> Result<Action, PpoError> {
        let params = self.policy.forward(state)?;
        Ok(self.head.greedy(&params)?)
    }

    pub fn value_of(&self, state: &[f64]) -> Result<f64, PpoError> {
        Ok(self.value.forward(state)?[0])
    }

    /// Several epochs of shuffled minibatch updates over `batch`.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &TrajectoryBatch, rng: &mut R) -> Result<UpdateStats, PpoError> {
        let (mut adv, returns) = compute_gae(batch, self.config.gamma, self.config.gae_lambda)?;
        if self.config.normalize_advantages {
            let n = adv.len() as f64;
            let mean = adv.iter().sum::<f64>() / n;
            let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
            if std >= 1e-8 {
                adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
            }
        }

        let saved = (self.policy.clone(), self.value.clone(), self.policy_opt.clone(), self.value_opt.clone());
        match self.run_epochs(batch, &adv, &returns, rng) {
            Ok(stats) => Ok(stats),
            Err(e) => {
                (self.policy, self.value, self.policy_opt, self.value_opt) = saved;
                Err(e)
            }
        }
    }

    fn run_epochs<R: Rng + ?Sized>(
        &mut self,
        batch: &TrajectoryBatch,
        adv: &[f64],
        returns: &[f64],
        rng: &mut R,
    ) -> Result<UpdateStats, PpoError> {
        let cfg = self.config.clone();
        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mut stats = UpdateStats::default();
        let mut samples = 0usize;
        let mut policy_grad = vec![0.0; self.policy.param_count()];
        let mut value_grad = vec![0.0; self.value.param_count()];
        let mut head_grad = vec![0.0; self.head.param_count()];

        for _ in 0..cfg.epochs_per_update {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.batch_size) {
                policy_grad.iter_mut().for_each(|g| *g = 0.0);
                value_grad.iter_mut().for_each(|g| *g = 0.0);
                let scale = 1.0 / chunk.len() as f64;
                let mut loss = 0.0;
                for &i in chunk {
                    let tr = &batch.transitions[i];
                    let a = adv[i];

                    let cache = self.policy.forward_cached(&tr.state)?;
                    let out = cache.output();
                    let log_prob = self.head.log_prob(out, &tr.action)?;
                    let ratio = (log_prob - tr.log_prob).exp();
                    let clipped_ratio = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
                    let surrogate = (ratio * a).min(clipped_ratio * a);
                    head_grad.iter_mut().for_each(|g| *g = 0.0);
                    if ratio * a <= clipped_ratio * a {
                        self.head.log_prob_grad(out, &tr.action, Some((&mut head_grad, -ratio * a * scale)))?;
                    }
                    let entropy = self.head.entropy_grad(out, Some((&mut head_grad, -cfg.entropy_coef * scale)))?;
                    self.policy.backward(&cache, &head_grad, &mut policy_grad)?;

                    let vcache = self.value.forward_cached(&tr.state)?;
                    let v = vcache.output()[0];
                    let err = v - returns[i];
                    self.value.backward(&vcache, &[2.0 * cfg.value_coef * err * scale], &mut value_grad)?;

                    loss += -surrogate - cfg.entropy_coef * entropy + cfg.value_coef * err * err;
                    stats.policy_loss += -surrogate;
                    stats.value_loss += err * err;
                    stats.entropy += entropy;
                    if (ratio - 1.0).abs() > cfg.clip_epsilon {
                        stats.clip_fraction += 1.0;
                    }
                    samples += 1;
                }
                if !loss.is_finite() {
                    return Err(PpoError::NonFiniteLoss);
                }
                clip_norm(&mut policy_grad, cfg.max_grad_norm);
                clip_norm(&mut value_grad, cfg.max_grad_norm);
                self.policy_opt.step(self.policy.params_mut(), &policy_grad)?;
                self.value_opt.step(self.value.params_mut(), &value_grad)?;
                stats.minibatches += 1;
            }
        }
        let n = samples.max(1) as f64;
        stats.policy_loss /= n;
        stats.value_loss /= n;
        stats.entropy /= n;
        stats.clip_fraction /= n;
        Ok(stats)
    }

    /// Agent checkpoint: header, head descriptor, actor block, critic block.
    pub fn save(&self, path: &Path) -> Result<(), PpoError> {
        let mut w = BufWriter::new(File::create(path).map_err(NnError::Io)?);
        self.write_to(&mut w)?;
        w.flush().map_err(NnError::Io)?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), PpoError> {
        let io = |r: std::io::Result<()>| r.map_err(NnError::Io);
        io(w.write_all(AGENT_MAGIC))?;
        io(w.write_all(&AGENT_VERSION.to_le_bytes()))?;
        let (tag, shape): (u32, Vec<u64>) = match &self.head {
            PolicyHead::Categorical { actions } => (0, vec![*actions as u64]),
            PolicyHead::MultiCategorical { sizes } => (1, sizes.iter().map(|&s| s as u64).collect()),
            PolicyHead::Beta { dim } => (2, vec![*dim as u64]),
        };
        io(w.write_all(&tag.to_le_bytes()))?;
        io(w.write_all(&(shape.len() as u32).to_le_bytes()))?;
        for s in shape {
            io(w.write_all(&s.to_le_bytes()))?;
        }
        self.policy.write_to(w)?;
        self.value.write_to(w)?;
        Ok(())
    }

    pub fn load(path: &Path, config: PpoConfig) -> Result<Self, PpoError> {
        let mut r = BufReader::new(File::open(path).map_err(NnError::Io)?);
        Self::read_from(&mut r, config)
    }

    pub fn read_from<R: Read>(r: &mut R, config: PpoConfig) -> Result<Self, PpoError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(NnError::Io)?;
        if &magic != AGENT_MAGIC {
            return Err(NnError::Checkpoint("not an agent checkpoint".into()).into());
        }
        let version = crate::nn::read_u32(r)?;
        if version != AGENT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported agent version {version}")).into());
        }
        let tag = crate::nn::read_u32(r)?;
        let n = crate::nn::read_u32(r)? as usize;
        if n > 1024 {
            return Err(NnError::Checkpoint("implausible head shape".into()).into());
        }
        let shape = (0..n).map(|_| crate::nn::read_u64(r).map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        let head = match (tag, shape.as_slice()) {
            (0, [a]) => PolicyHead::Categorical { actions: *a },
            (1, sizes) => PolicyHead::MultiCategorical { sizes: sizes.to_vec() },
            (2, [d]) => PolicyHead::Beta { dim: *d },
            _ => return Err(NnError::Checkpoint(format!("unknown head tag {tag}")).into()),
        };
        let policy = DenseNet::read_from(r)?;
        let value = DenseNet::read_from(r)?;
        if policy.output_dim() != head.param_count() || value.output_dim() != 1 || policy.input_dim() != value.input_dim() {
            return Err(NnError::Checkpoint("actor/critic shapes disagree with head".into()).into());
        }
        Ok(Self::from_parts(policy, value, head, config))
    }
}

const AGENT_MAGIC: &[u8; 8] = b"DMAGENT\0";
const AGENT_VERSION: u32 = 1;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn tr(reward: f64, value: f64, terminal: bool) -> Transition {
        Transition { state: vec![0.0], action: Action::Discrete(0), log_prob: 0.0, reward, value, terminal }
    }

    #[test]
    fn gae_single_terminal_step() {
        let b = TrajectoryBatch { transitions: vec![tr(1.0, 0.0, true)], bootstrap_value: 0.0 };
        let (a, r) = compute_gae(&b, 0.99, 0.95).unwrap();
        assert_eq!((a[0], r[0]), (1.0, 1.0));
    }

    #[test]
    fn gae_zero_everything() {
        let b = TrajectoryBatch { transitions: (0..5).map(|_| tr(0.0, 0.0, false)).collect(), bootstrap_value: 0.0 };
        let (a, _) = compute_gae(&b, 0.99, 0.95).unwrap();
        assert!(a.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gae_two_step_worked_example() {
        // backward recursion by hand
        let (g, l) = (0.99, 0.95);
        let a1 = 1.0 - 0.5;
        let a0 = (1.0 + g * 0.5 - 0.5) + g * l * a1;
        assert!((a0 - 1.46525f64).abs() < 1e-12);
        let b = TrajectoryBatch { transitions: vec![tr(1.0, 0.5, false), tr(1.0, 0.5, true)], bootstrap_value: 0.0 };
        let (a, r) = compute_gae(&b, g, l).unwrap();
        assert!((a[1] - 0.5).abs() < 1e-12);
        assert!((a[0] - 1.46525).abs() < 1e-12);
        assert!((r[0] - (1.46525 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn gae_respects_segment_boundaries() {
        let b = TrajectoryBatch {
            transitions: vec![tr(1.0, 0.0, true), tr(5.0, 0.0, false)],
            bootstrap_value: 2.0,
        };
        let (a, _) = compute_gae(&b, 0.5, 1.0).unwrap();
        assert_eq!(a[0], 1.0);
        assert_eq!(a[1], 5.0 + 0.5 * 2.0);
        assert!(matches!(compute_gae(&TrajectoryBatch::default(), 0.9, 0.9), Err(PpoError::EmptyBatch)));
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        for cfg in [
            PpoConfig { gamma: 1.0, ..Default::default() },
            PpoConfig { gae_lambda: 1.5, ..Default::default() },
            PpoConfig { clip_epsilon: 0.0, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(PpoError::Config(_))));
        }
    }

    fn bandit_learner(lr: f64, seed: u64) -> PpoLearner {
        let cfg = PpoConfig { learning_rate: lr, batch_size: 64, ..Default::default() };
        PpoLearner::new(2, &[16], PolicyHead::Categorical { actions: 2 }, cfg, &mut stream(seed, "init")).unwrap()
    }

    fn bandit_batch(l: &PpoLearner, rng: &mut crate::rng::StreamRng) -> TrajectoryBatch {
        let mut b = TrajectoryBatch::default();
        for i in 0..64 {
            let state = if i % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
            let out = l.act(&state, rng).unwrap();
            let reward = if out.action == Action::Discrete(0) { 1.0 } else { 0.0 };
            b.push(Transition { state, action: out.action, log_prob: out.log_prob, reward, value: out.value, terminal: true });
        }
        b
    }

    #[test]
    fn learns_a_two_state_bandit() {
        let mut l = bandit_learner(3e-3, 5);
        let mut rng = stream(5, "roll");
        for _ in 0..200 {
            let b = bandit_batch(&l, &mut rng);
            let s = l.update(&b, &mut rng).unwrap();
            assert!((0.0..=1.0).contains(&s.clip_fraction));
            assert!(s.entropy >= 0.0);
        }
        for state in [[1.0, 0.0], [0.0, 1.0]] {
            let p = l.head.probabilities(&l.policy.forward(&state).unwrap()).unwrap();
            assert!(p[0] > 0.9, "p(action 0) = {}", p[0]);
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut l = bandit_learner(0.0, 6);
        let before = l.clone();
        let mut rng = stream(6, "roll");
        let b = bandit_batch(&l, &mut rng);
        l.update(&b, &mut rng).unwrap();
        assert_eq!(l.policy.params(), before.policy.params());
        assert_eq!(l.value.params(), before.value.params());
    }

    #[test]
    fn fresh_batch_has_unit_ratio() {
        // no prior update: new log-prob equals the stored one, nothing clips
        let mut l = PpoLearner::new(
            2,
            &[8],
            PolicyHead::Categorical { actions: 3 },
            PpoConfig { epochs_per_update: 1, batch_size: 1024, learning_rate: 0.0, ..Default::default() },
            &mut stream(1, "i"),
        )
        .unwrap();
        let mut rng = stream(1, "r");
        let b = bandit_batch(&l, &mut rng);
        let s = l.update(&b, &mut rng).unwrap();
        assert_eq!(s.clip_fraction, 0.0);
        // normalised advantages have mean zero, so the unclipped surrogate averages to 0
        assert!(s.policy_loss.abs() < 1e-12);
    }

    #[test]
    fn zero_advantages_only_move_entropy_and_value() {
        let cfg = PpoConfig { normalize_advantages: false, learning_rate: 1e-2, epochs_per_update: 1, ..Default::default() };
        let mut with_pg = PpoLearner::new(2, &[8], PolicyHead::Categorical { actions: 2 }, cfg.clone(), &mut stream(2, "i")).unwrap();
        // value estimates equal to rewards, terminal steps: every advantage is 0
        let mut b = TrajectoryBatch::default();
        let mut rng = stream(2, "r");
        for i in 0..16 {
            let state = vec![i as f64 / 16.0, 1.0];
            let out = with_pg.act(&state, &mut rng).unwrap();
            b.push(Transition { state, action: out.action, log_prob: out.log_prob, reward: out.value, value: out.value, terminal: true });
        }
        let mut entropy_only = with_pg.clone();
        entropy_only.config.entropy_coef = 0.0;
        let start = with_pg.policy.params().to_vec();
        with_pg.update(&b, &mut stream(3, "u")).unwrap();
        entropy_only.update(&b, &mut stream(3, "u")).unwrap();
        // without entropy bonus and with A = 0, the actor must not move
        assert_eq!(entropy_only.policy.params(), start.as_slice());
        assert_ne!(with_pg.policy.params(), start.as_slice());
    }

    #[test]
    fn act_is_reproducible_and_uniform_when_zeroed() {
        let head = PolicyHead::Categorical { actions: 4 };
        let l = PpoLearner::from_parts(
            DenseNet::zeros(&[3, 4]).unwrap(),
            DenseNet::zeros(&[3, 1]).unwrap(),
            head,
            PpoConfig::default(),
        );
        let s = [0.3, 0.1, -0.2];
        let seq = |seed| {
            let mut rng = stream(seed, "a");
            (0..20).map(|_| l.act(&s, &mut rng).unwrap().action).collect::<Vec<_>>()
        };
        assert_eq!(seq(4), seq(4));
        assert_eq!(l.act(&s, &mut stream(0, "v")).unwrap().value, 0.0);

        let n = 100_000;
        let mut counts = [0usize; 4];
        let mut rng = stream(12, "freq");
        for _ in 0..n {
            counts[l.act(&s, &mut rng).unwrap().action.as_discrete().unwrap()] += 1;
        }
        let p = 0.25;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
        assert!(matches!(l.act(&[1.0], &mut stream(0, "x")), Err(PpoError::Nn(NnError::DimensionMismatch { .. }))));
    }

    #[test]
    fn non_finite_loss_keeps_parameters() {
        let mut l = bandit_learner(1e-2, 8);
        let before = l.clone();
        let mut rng = stream(8, "r");
        let mut b = bandit_batch(&l, &mut rng);
        b.transitions[3].reward = f64::INFINITY;
        assert!(l.update(&b, &mut rng).is_err());
        assert_eq!(l, before);
    }

    #[test]
    fn agent_checkpoint_round_trip() {
        let l = PpoLearner::new(3, &[5], PolicyHead::Beta { dim: 2 }, PpoConfig::default(), &mut stream(1, "c")).unwrap();
        let mut buf = Vec::new();
        l.write_to(&mut buf).unwrap();
        let back = PpoLearner::read_from(&mut buf.as_slice(), PpoConfig::default()).unwrap();
        assert_eq!(back.policy, l.policy);
        assert_eq!(back.value, l.value);
        assert_eq!(back.head, l.head);
        buf[0] = 0;
        assert!(PpoLearner::read_from(&mut buf.as_slice(), PpoConfig::default()).is_err());
    }
}
