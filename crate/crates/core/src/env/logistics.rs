//! Five-node shipping network feeding three destinations.
//!
//! n1 supplies only A and n2 only B, on demand. Destinations are settled
//! once, at the end of the episode.

use rand::Rng;

use super::{EnvContract, EnvError, EnvSnapshot, Environment, StepOutput};
use crate::dag::DagTopology;
use crate::rng::{stream, StreamRng};

pub const NODE_HOLDING: f64 = 0.3;
pub const MAX_SHIPPING: f64 = 0.3;
pub const DESTINATION_HOLDING: f64 = 3.0;
pub const SHORTAGE: f64 = 8.0;
pub const BENEFITS: [f64; 3] = [100.0, 300.0, 200.0];
/// Inclusive integer demand bounds `[destination][product] = (low, high)`.
pub const DEMAND_BOUNDS: [[(u32, u32); 2]; 3] = [[(5, 10), (3, 7)], [(110, 130), (70, 90)], [(35, 45), (80, 100)]];

const OBS_DIM: usize = 9;
const INVENTORY_SCALE: f64 = 20.0;
const DEMAND_SCALE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Link {
    Node(usize),
    Destination(usize),
}

/// Outgoing links per node, in action order.
const LINKS: [[Link; 2]; 5] = [
    [Link::Node(2), Link::Node(3)],
    [Link::Node(2), Link::Node(3)],
    [Link::Node(4), Link::Destination(0)],
    [Link::Node(4), Link::Destination(1)],
    [Link::Destination(1), Link::Destination(2)],
];
/// Product supplied by each source.
const SOURCE_PRODUCT: [usize; 2] = [0, 1];

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticsConfig {
    pub episode_length: usize,
    pub goal_period: usize,
}

impl Default for LogisticsConfig {
    fn default() -> Self {
        Self { episode_length: 300, goal_period: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticsState {
    /// `[node][product]`; sources always hold zero.
    pub inventory: [[u32; 2]; 5],
    /// Shipping cost per `(node, link)`.
    pub shipping: [[f64; 2]; 5],
    pub demand: [[u32; 2]; 3],
    pub delivered: [[u32; 2]; 3],
    pub created: [u32; 2],
    pub step: usize,
    pub rng: StreamRng,
}

/// Terms of the end-of-episode settlement.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Settlement {
    pub benefit: f64,
    pub shortage_cost: f64,
    pub surplus_cost: f64,
}

impl Settlement {
    pub fn total(&self) -> f64 {
        self.benefit - self.shortage_cost - self.surplus_cost
    }
}

pub fn settle(demand: &[[u32; 2]; 3], delivered: &[[u32; 2]; 3]) -> Settlement {
    let mut s = Settlement::default();
    for d in 0..3 {
        let (mut met, mut total) = (0u32, 0u32);
        for p in 0..2 {
            let (want, got) = (demand[d][p], delivered[d][p]);
            met += want.min(got);
            total += want;
            s.shortage_cost += SHORTAGE * f64::from(want.saturating_sub(got));
            s.surplus_cost += DESTINATION_HOLDING * f64::from(got.saturating_sub(want));
        }
        if total > 0 {
            s.benefit += BENEFITS[d] * f64::from(met) / f64::from(total);
        }
    }
    s
}

#[derive(Debug, Clone)]
pub struct LogisticsEnv {
    config: LogisticsConfig,
    contract: EnvContract,
    state: LogisticsState,
}

impl LogisticsEnv {
    pub fn new(config: LogisticsConfig) -> Result<Self, EnvError> {
        if config.episode_length == 0 || config.goal_period == 0 {
            return Err(EnvError::InvalidConfig("logistics lengths must be positive".into()));
        }
        let topology = DagTopology::from_names(
            &["n1", "n2", "n3", "n4", "n5"],
            &[("n1", "n3"), ("n1", "n4"), ("n2", "n3"), ("n2", "n4"), ("n3", "n5"), ("n4", "n5")],
        )?;
        let contract = EnvContract {
            topology,
            obs_dims: vec![OBS_DIM; 5],
            action_sizes: vec![3, 3, 5, 5, 5],
            goal_period: config.goal_period,
            max_steps: config.episode_length,
        };
        let state = LogisticsState {
            inventory: [[0; 2]; 5],
            shipping: [[0.0; 2]; 5],
            demand: [[0; 2]; 3],
            delivered: [[0; 2]; 3],
            created: [0; 2],
            step: 0,
            rng: stream(0, "logistics"),
        };
        let mut env = Self { config, contract, state };
        env.reset(0);
        Ok(env)
    }

    pub fn state(&self) -> &LogisticsState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut LogisticsState {
        &mut self.state
    }

    /// Decode an action into `(product, link)`; `None` is the no-op.
    fn decode(node: usize, action: usize) -> Option<(usize, usize)> {
        match (node, action) {
            (_, 0) => None,
            (0 | 1, a) => Some((SOURCE_PRODUCT[node], a - 1)),
            (_, a) => Some(((a - 1) / 2, (a - 1) % 2)),
        }
    }
}

impl Environment for LogisticsEnv {
    fn contract(&self) -> &EnvContract {
        &self.contract
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, "logistics");
        let mut shipping = [[0.0; 2]; 5];
        for row in shipping.iter_mut() {
            for c in row.iter_mut() {
                *c = rng.random_range(0.0..=MAX_SHIPPING);
            }
        }
        let mut demand = [[0; 2]; 3];
        for (d, row) in demand.iter_mut().enumerate() {
            for (p, x) in row.iter_mut().enumerate() {
                let (lo, hi) = DEMAND_BOUNDS[d][p];
                *x = rng.random_range(lo..=hi);
            }
        }
        self.state = LogisticsState {
            inventory: [[0; 2]; 5],
            shipping,
            demand,
            delivered: [[0; 2]; 3],
            created: [0; 2],
            step: 0,
            rng,
        };
        self.observations()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutput, EnvError> {
        self.contract.check_actions(actions)?;
        if self.is_done() {
            return Err(EnvError::EpisodeOver);
        }
        let s = &mut self.state;
        let start = s.inventory;
        let mut arriving = [[0u32; 2]; 5];
        let mut cost = 0.0;
        for (node, &a) in actions.iter().enumerate() {
            let Some((product, link)) = Self::decode(node, a) else { continue };
            if node >= 2 {
                // non-sources ship only what they held at the start of the step
                if start[node][product] == 0 {
                    continue;
                }
                s.inventory[node][product] -= 1;
            } else {
                s.created[product] += 1;
            }
            cost += s.shipping[node][link];
            match LINKS[node][link] {
                Link::Node(j) => arriving[j][product] += 1,
                Link::Destination(d) => s.delivered[d][product] += 1,
            }
        }
        for (inv, add) in s.inventory.iter_mut().zip(arriving) {
            inv[0] += add[0];
            inv[1] += add[1];
        }
        let held: u32 = s.inventory.iter().flatten().sum();
        cost += NODE_HOLDING * f64::from(held);
        s.step += 1;
        let mut reward = -cost;
        if s.step == self.config.episode_length {
            reward += settle(&s.demand, &s.delivered).total();
        }
        Ok(StepOutput { observations: self.observations(), team_reward: reward, done: self.is_done() })
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        let s = &self.state;
        let t = s.step as f64 / self.config.episode_length as f64;
        (0..5)
            .map(|node| {
                let mut o = Vec::with_capacity(OBS_DIM);
                o.extend(s.inventory[node].iter().map(|&x| f64::from(x) / INVENTORY_SCALE));
                o.push(t);
                o.extend(s.shipping[node].iter().map(|c| c / MAX_SHIPPING));
                for link in LINKS[node] {
                    match link {
                        Link::Node(j) => o.extend(s.inventory[j].iter().map(|&x| f64::from(x) / INVENTORY_SCALE)),
                        Link::Destination(d) => o.extend(
                            (0..2).map(|p| f64::from(s.demand[d][p].saturating_sub(s.delivered[d][p])) / DEMAND_SCALE),
                        ),
                    }
                }
                o
            })
            .collect()
    }

    fn step_index(&self) -> usize {
        self.state.step
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot::Logistics(self.config.clone(), self.state.clone())
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<(), EnvError> {
        match snapshot {
            EnvSnapshot::Logistics(c, s) if *c == self.config => {
                self.state = s.clone();
                Ok(())
            }
            _ => Err(EnvError::VersionMismatch),
        }
    }

    fn check_invariants(&self) -> Result<(), EnvError> {
        let s = &self.state;
        for (d, row) in s.demand.iter().enumerate() {
            for (p, &x) in row.iter().enumerate() {
                let (lo, hi) = DEMAND_BOUNDS[d][p];
                if !(lo..=hi).contains(&x) {
                    return Err(EnvError::InvariantViolated(format!("demand {x} outside [{lo},{hi}]")));
                }
            }
        }
        if s.shipping.iter().flatten().any(|c| !(0.0..=MAX_SHIPPING).contains(c)) {
            return Err(EnvError::InvariantViolated("shipping cost outside [0, 0.3]".into()));
        }
        for p in 0..2 {
            let placed: u32 = s.delivered.iter().map(|d| d[p]).sum::<u32>() + s.inventory.iter().map(|n| n[p]).sum::<u32>();
            if placed != s.created[p] {
                return Err(EnvError::InvariantViolated(format!("product {p}: created {} != placed {placed}", s.created[p])));
            }
        }
        if s.inventory[0] != [0, 0] || s.inventory[1] != [0, 0] {
            return Err(EnvError::InvariantViolated("sources hold no inventory".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_draws_demand_within_bounds() {
        let mut env = LogisticsEnv::new(LogisticsConfig::default()).unwrap();
        for seed in 0..200 {
            env.reset(seed);
            env.check_invariants().unwrap();
            assert!((110..=130).contains(&env.state().demand[1][0]));
        }
        let a = env.reset(9);
        let s = env.state().clone();
        assert_eq!(a, env.reset(9));
        assert_eq!(&s, env.state());
    }

    #[test]
    fn settlement_terms() {
        let demand = [[7, 5], [120, 80], [40, 90]];
        let s = settle(&demand, &demand);
        assert_eq!((s.benefit, s.shortage_cost, s.surplus_cost), (600.0, 0.0, 0.0));
        let mut short = demand;
        short[2][1] -= 1;
        let s = settle(&demand, &short);
        assert_eq!(s.shortage_cost, 8.0);
        assert!((s.benefit - (600.0 - 200.0 / 130.0)).abs() < 1e-9);
        let mut over = demand;
        over[0][0] += 2;
        assert_eq!(settle(&demand, &over).surplus_cost, 6.0);
        let nothing = settle(&demand, &[[0; 2]; 3]);
        assert_eq!(nothing.benefit, 0.0);
        assert_eq!(nothing.shortage_cost, 8.0 * 342.0);
    }

    #[test]
    fn sending_nothing_costs_only_shortage() {
        let mut env = LogisticsEnv::new(LogisticsConfig::default()).unwrap();
        env.reset(5);
        let demand: u32 = env.state().demand.iter().flatten().sum();
        let mut rewards = Vec::new();
        loop {
            let out = env.step(&[0; 5]).unwrap();
            rewards.push(out.team_reward);
            if out.done {
                break;
            }
        }
        assert_eq!(rewards.len(), 300);
        assert!(rewards[..299].iter().all(|&r| r == 0.0));
        assert_eq!(rewards[299], -SHORTAGE * f64::from(demand));
    }

    #[test]
    fn units_move_one_hop_per_step() {
        let mut env = LogisticsEnv::new(LogisticsConfig::default()).unwrap();
        env.reset(1);
        // n1 sends A to n3; n3 tries to forward before it has stock
        let out = env.step(&[1, 0, 1, 0, 0]).unwrap();
        let s = env.state();
        assert_eq!(s.inventory[2], [1, 0]);
        let expected = -(s.shipping[0][0] + NODE_HOLDING);
        assert!((out.team_reward - expected).abs() < 1e-12);
        // n3 ships A to destination 1
        env.step(&[0, 0, 2, 0, 0]).unwrap();
        assert_eq!(env.state().delivered[0], [1, 0]);
        assert_eq!(env.state().inventory[2], [0, 0]);
        env.check_invariants().unwrap();
    }

    #[test]
    fn decode_covers_action_space() {
        assert_eq!(LogisticsEnv::decode(1, 2), Some((1, 1)));
        assert_eq!(LogisticsEnv::decode(4, 4), Some((1, 1)));
        assert_eq!(LogisticsEnv::decode(3, 1), Some((0, 0)));
        assert_eq!(LogisticsEnv::decode(2, 0), None);
    }
}
