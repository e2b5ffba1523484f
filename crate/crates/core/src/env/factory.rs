//! Four-machine production line.
//!
//! Node 0 makes parts `a` or `b`; node 1 makes `B` from `a`+`b`; node 2
//! makes `C` from `b`; node 3 assembles P1 from `B`, P2 from `B`+`C`, P3
//! from `C`. Finished products are sold at once while demand remains.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::{EnvContract, EnvError, EnvSnapshot, Environment, StepOutput};
use crate::dag::DagTopology;
use crate::rng::stream;

pub const LEVEL1_HOLDING: f64 = 0.3;
pub const LEVEL2_HOLDING: f64 = 0.8;
pub const OVERPRODUCTION_PENALTY: f64 = 1.0;
pub const DEMAND_PER_PERIOD: u32 = 10;
const OBS_DIM: usize = 11;
const INVENTORY_SCALE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FactoryConfig {
    pub goal_periods: usize,
    pub period_length: usize,
}

impl Default for FactoryConfig {
    fn default() -> Self {
        Self { goal_periods: 10, period_length: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FactoryState {
    /// Node 0 inventory of parts `a`, `b`.
    pub parts: [u32; 2],
    pub stock_b: u32,
    pub stock_c: u32,
    /// Product values per goal period, each a permutation of {2,3,4}.
    pub values: Vec<[u32; 3]>,
    pub demands: Vec<[u32; 3]>,
    pub remaining: [u32; 3],
    pub surplus: u32,
    pub step: usize,
    /// Finals made this period, and how many were sold.
    pub made: [u32; 3],
    pub sold: [u32; 3],
    /// Actions after the bill-of-material check of the last step.
    pub effective: [usize; 4],
}

impl FactoryState {
    pub fn period(&self, len: usize) -> usize {
        self.step / len
    }
}

#[derive(Debug, Clone)]
pub struct FactoryEnv {
    config: FactoryConfig,
    contract: EnvContract,
    state: FactoryState,
}

/// Uniform weak composition of `total` into three parts (stars and bars).
fn random_composition<R: Rng + ?Sized>(total: u32, rng: &mut R) -> [u32; 3] {
    let slots: Vec<u32> = (0..total + 2).collect();
    let mut bars: Vec<u32> = slots.choose_multiple(rng, 2).copied().collect();
    bars.sort_unstable();
    [bars[0], bars[1] - bars[0] - 1, total + 1 - bars[1]]
}

impl FactoryEnv {
    pub fn new(config: FactoryConfig) -> Result<Self, EnvError> {
        if config.goal_periods == 0 || config.period_length == 0 {
            return Err(EnvError::InvalidConfig("factory needs at least one period of one step".into()));
        }
        let topology = DagTopology::from_names(
            &["level1", "level2_b", "level2_c", "level3"],
            &[("level1", "level2_b"), ("level1", "level2_c"), ("level2_b", "level3"), ("level2_c", "level3")],
        )?;
        let contract = EnvContract {
            topology,
            obs_dims: vec![OBS_DIM; 4],
            action_sizes: vec![3, 2, 2, 4],
            goal_period: config.period_length,
            max_steps: config.goal_periods * config.period_length,
        };
        let mut env = Self { config, contract, state: FactoryState::default() };
        env.reset(0);
        Ok(env)
    }

    pub fn config(&self) -> &FactoryConfig {
        &self.config
    }

    pub fn state(&self) -> &FactoryState {
        &self.state
    }

    /// Overwrite inventories, for tests and examples.
    pub fn set_inventory(&mut self, parts: [u32; 2], stock_b: u32, stock_c: u32) {
        self.state.parts = parts;
        self.state.stock_b = stock_b;
        self.state.stock_c = stock_c;
    }

    /// Overwrite the current period's values and remaining demand.
    pub fn set_market(&mut self, values: [u32; 3], remaining: [u32; 3]) {
        let p = self.state.period(self.config.period_length).min(self.config.goal_periods - 1);
        self.state.values[p] = values;
        self.state.remaining = remaining;
    }

    fn holding_cost(&self) -> f64 {
        let s = &self.state;
        LEVEL1_HOLDING * f64::from(s.parts[0] + s.parts[1]) + LEVEL2_HOLDING * f64::from(s.stock_b + s.stock_c)
    }

    fn current_period(&self) -> usize {
        self.state.period(self.config.period_length).min(self.config.goal_periods - 1)
    }
}

impl Environment for FactoryEnv {
    fn contract(&self) -> &EnvContract {
        &self.contract
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, "factory/schedule");
        let mut values = Vec::with_capacity(self.config.goal_periods);
        let mut demands = Vec::with_capacity(self.config.goal_periods);
        for _ in 0..self.config.goal_periods {
            let mut v = [2, 3, 4];
            v.shuffle(&mut rng);
            values.push(v);
            demands.push(random_composition(DEMAND_PER_PERIOD, &mut rng));
        }
        self.state = FactoryState { remaining: demands[0], values, demands, ..FactoryState::default() };
        self.observations()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutput, EnvError> {
        self.contract.check_actions(actions)?;
        if self.is_done() {
            return Err(EnvError::EpisodeOver);
        }
        let period = self.current_period();
        let s = &mut self.state;
        let mut effective = [0usize; 4];

        // everything is checked against start-of-step stock; outputs land afterwards
        let (mut a, mut b, mut big_b, mut big_c) = (s.parts[0], s.parts[1], s.stock_b, s.stock_c);
        let mut out = [0u32; 4];
        match actions[0] {
            1 => out[0] += 1,
            2 => out[1] += 1,
            _ => {}
        }
        effective[0] = actions[0];
        if actions[1] == 1 && a >= 1 && b >= 1 {
            a -= 1;
            b -= 1;
            out[2] += 1;
            effective[1] = 1;
        }
        if actions[2] == 1 && b >= 1 {
            b -= 1;
            out[3] += 1;
            effective[2] = 1;
        }
        let mut finished = None;
        match actions[3] {
            1 if big_b >= 1 => {
                big_b -= 1;
                finished = Some(0);
            }
            2 if big_b >= 1 && big_c >= 1 => {
                big_b -= 1;
                big_c -= 1;
                finished = Some(1);
            }
            3 if big_c >= 1 => {
                big_c -= 1;
                finished = Some(2);
            }
            _ => {}
        }
        if let Some(p) = finished {
            effective[3] = p + 1;
        }
        s.parts = [a + out[0], b + out[1]];
        s.stock_b = big_b + out[2];
        s.stock_c = big_c + out[3];
        s.effective = effective;

        let mut revenue = 0.0;
        if let Some(p) = finished {
            s.made[p] += 1;
            if s.remaining[p] > 0 {
                s.remaining[p] -= 1;
                s.sold[p] += 1;
                revenue = f64::from(s.values[period][p]);
            } else {
                s.surplus += 1;
            }
        }
        s.step += 1;
        let mut penalty = 0.0;
        if s.step % self.config.period_length == 0 {
            penalty = OVERPRODUCTION_PENALTY * f64::from(s.surplus);
            s.surplus = 0;
            s.made = [0; 3];
            s.sold = [0; 3];
            if let Some(next) = s.demands.get(period + 1) {
                s.remaining = *next;
            }
        }
        let reward = revenue - penalty - self.holding_cost();
        Ok(StepOutput { observations: self.observations(), team_reward: reward, done: self.is_done() })
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        let s = &self.state;
        let p = self.current_period();
        let phase = (s.step % self.config.period_length) as f64 / self.config.period_length as f64;
        let inv = |x: u32| f64::from(x) / INVENTORY_SCALE;
        let parts = [inv(s.parts[0]), inv(s.parts[1])];
        let own_up: [([f64; 2], [f64; 2]); 4] = [
            (parts, [0.0, 0.0]),
            ([inv(s.stock_b), 0.0], parts),
            ([inv(s.stock_c), 0.0], parts),
            ([0.0, 0.0], [inv(s.stock_b), inv(s.stock_c)]),
        ];
        own_up
            .iter()
            .enumerate()
            .map(|(node, (own, up))| {
                let mut o = Vec::with_capacity(OBS_DIM);
                o.extend_from_slice(own);
                o.extend_from_slice(up);
                o.push(phase);
                if node == 3 {
                    o.extend(s.values[p].iter().map(|&v| f64::from(v) / 4.0));
                    o.extend(s.remaining.iter().map(|&d| f64::from(d) / f64::from(DEMAND_PER_PERIOD)));
                } else {
                    o.extend([0.0; 6]);
                }
                o
            })
            .collect()
    }

    fn step_index(&self) -> usize {
        self.state.step
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot::Factory(self.config.clone(), self.state.clone())
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<(), EnvError> {
        match snapshot {
            EnvSnapshot::Factory(c, s) if *c == self.config => {
                self.state = s.clone();
                Ok(())
            }
            _ => Err(EnvError::VersionMismatch),
        }
    }

    fn check_invariants(&self) -> Result<(), EnvError> {
        let s = &self.state;
        for v in &s.values {
            let mut sorted = *v;
            sorted.sort_unstable();
            if sorted != [2, 3, 4] {
                return Err(EnvError::InvariantViolated(format!("values {v:?} not a permutation of 2,3,4")));
            }
        }
        for d in &s.demands {
            if d.iter().sum::<u32>() != DEMAND_PER_PERIOD {
                return Err(EnvError::InvariantViolated(format!("demand {d:?} does not sum to 10")));
            }
        }
        if s.step < self.contract.max_steps {
            let p = self.current_period();
            for k in 0..3 {
                if s.sold[k] + s.remaining[k] != s.demands[p][k] {
                    return Err(EnvError::InvariantViolated(format!("demand not conserved for product {k}")));
                }
            }
            let made: u32 = s.made.iter().sum();
            if made != s.sold.iter().sum::<u32>() + s.surplus {
                return Err(EnvError::InvariantViolated("finished units != sold + surplus".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_deterministic_and_valid() {
        let mut env = FactoryEnv::new(FactoryConfig::default()).unwrap();
        let a = env.reset(11);
        let sa = env.state().clone();
        let b = env.reset(11);
        assert_eq!(a, b);
        assert_eq!(&sa, env.state());
        env.check_invariants().unwrap();
        for v in &env.state().values {
            let mut s = *v;
            s.sort_unstable();
            assert_eq!(s, [2, 3, 4]);
        }
    }

    #[test]
    fn compositions_cover_all_66_outcomes() {
        let mut rng = stream(3, "comp");
        let mut seen = std::collections::HashSet::new();
        for _ in 0..20_000 {
            let c = random_composition(10, &mut rng);
            assert_eq!(c.iter().sum::<u32>(), 10);
            seen.insert(c);
        }
        assert_eq!(seen.len(), 66);
    }

    #[test]
    fn selling_a_value_four_product() {
        let mut env = FactoryEnv::new(FactoryConfig::default()).unwrap();
        env.reset(1);
        env.set_market([2, 3, 4], [0, 0, 5]);
        env.set_inventory([0, 0], 0, 1);
        let out = env.step(&[0, 0, 0, 3]).unwrap();
        assert_eq!(out.team_reward, 4.0);
        assert_eq!(env.state().remaining, [0, 0, 4]);
    }

    #[test]
    fn level_two_holding_cost() {
        let mut env = FactoryEnv::new(FactoryConfig::default()).unwrap();
        env.reset(1);
        env.set_inventory([0, 0], 1, 1);
        let out = env.step(&[0, 0, 0, 0]).unwrap();
        assert!((out.team_reward + 1.6).abs() < 1e-12);
    }

    #[test]
    fn idle_episode_earns_nothing() {
        let mut env = FactoryEnv::new(FactoryConfig::default()).unwrap();
        env.reset(4);
        let mut total = 0.0;
        let mut steps = 0;
        loop {
            let out = env.step(&[0; 4]).unwrap();
            total += out.team_reward;
            steps += 1;
            if out.done {
                break;
            }
        }
        assert_eq!((total, steps), (0.0, 400));
        assert_eq!(env.step(&[0; 4]), Err(EnvError::EpisodeOver));
    }

    #[test]
    fn missing_parts_make_actions_idle() {
        let mut env = FactoryEnv::new(FactoryConfig::default()).unwrap();
        env.reset(2);
        let out = env.step(&[0, 1, 1, 2]).unwrap();
        assert_eq!(env.state().effective, [0; 4]);
        assert_eq!(out.team_reward, 0.0);
        // one b, two claimants: node 1 also needs a, so node 2 gets it
        env.set_inventory([0, 1], 0, 0);
        env.step(&[0, 1, 1, 0]).unwrap();
        assert_eq!(env.state().effective, [0, 0, 1, 0]);
        env.set_inventory([1, 1], 0, 0);
        env.step(&[0, 1, 1, 0]).unwrap();
        assert_eq!(env.state().effective, [0, 1, 0, 0]);
    }

    #[test]
    fn surplus_is_penalised_at_period_end() {
        let cfg = FactoryConfig { goal_periods: 2, period_length: 2 };
        let mut env = FactoryEnv::new(cfg).unwrap();
        env.reset(0);
        env.set_market([2, 3, 4], [0, 0, 0]);
        env.set_inventory([0, 0], 2, 0);
        let r1 = env.step(&[0, 0, 0, 1]).unwrap().team_reward;
        assert!((r1 + 0.8).abs() < 1e-12);
        let r2 = env.step(&[0, 0, 0, 1]).unwrap().team_reward;
        assert!((r2 + 2.0).abs() < 1e-12, "{r2}");
        assert_eq!(env.state().remaining, env.state().demands[1]);
    }

    #[test]
    fn invalid_actions() {
        let mut env = FactoryEnv::new(FactoryConfig::default()).unwrap();
        assert_eq!(env.step(&[0, 2, 0, 0]), Err(EnvError::InvalidAction { node: 1, action: 2, size: 2 }));
        assert_eq!(env.step(&[0, 0]), Err(EnvError::ActionCount { expected: 4, got: 2 }));
        assert!(FactoryEnv::new(FactoryConfig { goal_periods: 0, period_length: 4 }).is_err());
    }
}
