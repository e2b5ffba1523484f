//! Hierarchical predator-prey on a square grid.
//!
//! Preys form a tree (root → mid → two sinks); each child stays within a
//! Chebyshev box around its parent while alive. Predators hunt only the
//! sinks; a caught sink stays where it fell.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{EnvContract, EnvError, EnvSnapshot, Environment, StepOutput};
use crate::dag::DagTopology;
use crate::rng::{stream, StreamRng};

/// Action `k` moves by `MOVES[k]`; 0 stays put.
pub const MOVES: [(i32, i32); 9] = [(0, 0), (-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
/// Predators step along grid axes only.
const PREDATOR_MOVES: [(i32, i32); 5] = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)];
const OBS_DIM: usize = 9;
const PARENT: [Option<usize>; 4] = [None, Some(0), Some(1), Some(1)];
const SINKS: [usize; 2] = [2, 3];

#[derive(Debug, Clone, PartialEq)]
pub struct PreyConfig {
    pub grid_size: i32,
    pub predators: usize,
    pub max_steps: usize,
    pub goal_period: usize,
    pub leash: i32,
    /// Steps predators spend on their random initial heading before chasing.
    pub wander_steps: usize,
}

impl Default for PreyConfig {
    fn default() -> Self {
        Self { grid_size: 20, predators: 2, max_steps: 200, goal_period: 10, leash: 5, wander_steps: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreyState {
    pub preys: [(i32, i32); 4],
    pub alive: [bool; 4],
    pub predators: Vec<(i32, i32)>,
    pub headings: Vec<(i32, i32)>,
    pub step: usize,
    pub rng: StreamRng,
}

#[derive(Debug, Clone)]
pub struct PreyEnv {
    config: PreyConfig,
    contract: EnvContract,
    state: PreyState,
}

fn chebyshev(a: (i32, i32), b: (i32, i32)) -> i32 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

fn manhattan(a: (i32, i32), b: (i32, i32)) -> i32 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

impl PreyEnv {
    pub fn new(config: PreyConfig) -> Result<Self, EnvError> {
        if config.grid_size < 8 || config.predators == 0 || config.predators > 4 {
            return Err(EnvError::InvalidConfig("prey needs grid ≥ 8 and 1–4 predators".into()));
        }
        if config.max_steps == 0 || config.goal_period == 0 || config.leash < 1 {
            return Err(EnvError::InvalidConfig("prey lengths and leash must be positive".into()));
        }
        let topology = DagTopology::from_names(&["root", "mid", "sink_a", "sink_b"], &[
            ("root", "mid"),
            ("mid", "sink_a"),
            ("mid", "sink_b"),
        ])?;
        let contract = EnvContract {
            topology,
            obs_dims: vec![OBS_DIM; 4],
            action_sizes: vec![MOVES.len(); 4],
            goal_period: config.goal_period,
            max_steps: config.max_steps,
        };
        let state = PreyState {
            preys: [(0, 0); 4],
            alive: [true; 4],
            predators: Vec::new(),
            headings: Vec::new(),
            step: 0,
            rng: stream(0, "prey"),
        };
        let mut env = Self { config, contract, state };
        env.reset(0);
        Ok(env)
    }

    pub fn state(&self) -> &PreyState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut PreyState {
        &mut self.state
    }

    fn clamp_grid(&self, p: (i32, i32)) -> (i32, i32) {
        let hi = self.config.grid_size - 1;
        (p.0.clamp(0, hi), p.1.clamp(0, hi))
    }

    fn living_sinks(&self) -> usize {
        SINKS.iter().filter(|&&k| self.state.alive[k]).count()
    }

    /// One greedy Manhattan step toward `target`, ties broken at random.
    fn chase(&mut self, from: (i32, i32), target: (i32, i32)) -> (i32, i32) {
        let options: Vec<(i32, i32)> = PREDATOR_MOVES.iter().map(|&(dx, dy)| self.clamp_grid((from.0 + dx, from.1 + dy))).collect();
        let best = options.iter().map(|&p| manhattan(p, target)).min().expect("non-empty");
        let ties: Vec<(i32, i32)> = options.into_iter().filter(|&p| manhattan(p, target) == best).collect();
        *ties.choose(&mut self.state.rng).expect("non-empty")
    }
}

impl Environment for PreyEnv {
    fn contract(&self) -> &EnvContract {
        &self.contract
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        let g = self.config.grid_size;
        let c = g / 2;
        let corners = [(0, 0), (g - 1, g - 1), (0, g - 1), (g - 1, 0)];
        let mut rng = stream(seed, "prey");
        let headings = (0..self.config.predators).map(|_| PREDATOR_MOVES[rng.random_range(1..PREDATOR_MOVES.len())]).collect();
        self.state = PreyState {
            preys: [(c, c), (c, c + 1), (c - 1, c + 2), (c + 1, c + 2)],
            alive: [true; 4],
            predators: corners[..self.config.predators].to_vec(),
            headings,
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
        let leash = self.config.leash;
        for &node in self.contract.topology.topological_order().to_vec().iter() {
            let i = node.index();
            if !self.state.alive[i] {
                continue;
            }
            let (dx, dy) = MOVES[actions[i]];
            let cur = self.state.preys[i];
            let mut next = self.clamp_grid((cur.0 + dx, cur.1 + dy));
            if let Some(p) = PARENT[i] {
                let anchor = self.state.preys[p];
                next = (next.0.clamp(anchor.0 - leash, anchor.0 + leash), next.1.clamp(anchor.1 - leash, anchor.1 + leash));
                next = self.clamp_grid(next);
            }
            self.state.preys[i] = next;
        }

        let wandering = self.state.step < self.config.wander_steps;
        for k in 0..self.state.predators.len() {
            let from = self.state.predators[k];
            let target = SINKS
                .iter()
                .filter(|&&s| self.state.alive[s])
                .map(|&s| self.state.preys[s])
                .min_by_key(|&p| manhattan(p, from));
            let next = match target {
                _ if wandering => {
                    let (dx, dy) = self.state.headings[k];
                    self.clamp_grid((from.0 + dx, from.1 + dy))
                }
                Some(t) => self.chase(from, t),
                None => from,
            };
            self.state.predators[k] = next;
        }
        for s in SINKS {
            if self.state.alive[s] && self.state.predators.contains(&self.state.preys[s]) {
                self.state.alive[s] = false;
            }
        }
        self.state.step += 1;
        let reward = self.living_sinks() as f64;
        Ok(StepOutput { observations: self.observations(), team_reward: reward, done: self.is_done() })
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        let s = &self.state;
        let g = f64::from(self.config.grid_size);
        let leash = f64::from(self.config.leash);
        (0..4)
            .map(|i| {
                let me = s.preys[i];
                let mut o = Vec::with_capacity(OBS_DIM);
                o.push(f64::from(me.0) / g);
                o.push(f64::from(me.1) / g);
                match PARENT[i] {
                    Some(p) => {
                        o.push(f64::from(s.preys[p].0 - me.0) / leash);
                        o.push(f64::from(s.preys[p].1 - me.1) / leash);
                    }
                    None => o.extend([0.0, 0.0]),
                }
                let mut near: Vec<(i32, i32)> = s.predators.clone();
                near.sort_by_key(|&p| (chebyshev(p, me), p));
                for k in 0..2 {
                    match near.get(k) {
                        Some(p) => {
                            o.push(f64::from(p.0 - me.0) / g);
                            o.push(f64::from(p.1 - me.1) / g);
                        }
                        None => o.extend([0.0, 0.0]),
                    }
                }
                o.push(if s.alive[i] { 1.0 } else { 0.0 });
                o
            })
            .collect()
    }

    fn step_index(&self) -> usize {
        self.state.step
    }

    fn is_done(&self) -> bool {
        self.state.step >= self.config.max_steps || self.living_sinks() == 0
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot::Prey(self.config.clone(), self.state.clone())
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<(), EnvError> {
        match snapshot {
            EnvSnapshot::Prey(c, s) if *c == self.config => {
                self.state = s.clone();
                Ok(())
            }
            _ => Err(EnvError::VersionMismatch),
        }
    }

    fn check_invariants(&self) -> Result<(), EnvError> {
        let s = &self.state;
        let g = self.config.grid_size;
        let on_grid = |p: &(i32, i32)| (0..g).contains(&p.0) && (0..g).contains(&p.1);
        if !s.preys.iter().chain(&s.predators).all(on_grid) {
            return Err(EnvError::InvariantViolated("position off the grid".into()));
        }
        for (i, parent) in PARENT.iter().enumerate() {
            if let (Some(p), true) = (parent, s.alive[i]) {
                let d = chebyshev(s.preys[i], s.preys[*p]);
                if d > self.config.leash {
                    return Err(EnvError::InvariantViolated(format!("prey {i} is {d} cells from its parent")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn random_episode(env: &mut PreyEnv, seed: u64) -> (usize, f64) {
        env.reset(seed);
        let mut rng = stream(seed, "policy");
        let mut total = 0.0;
        loop {
            let a: Vec<usize> = (0..4).map(|_| rng.random_range(0..9)).collect();
            let out = env.step(&a).unwrap();
            env.check_invariants().unwrap();
            assert!((0.0..=2.0).contains(&out.team_reward));
            total += out.team_reward;
            if out.done {
                return (env.step_index(), total);
            }
        }
    }

    #[test]
    fn random_policies_survive_a_moderate_time() {
        let mut env = PreyEnv::new(PreyConfig::default()).unwrap();
        let n = 200;
        let mean = (0..n).map(|s| random_episode(&mut env, s).0 as f64).sum::<f64>() / n as f64;
        assert!((30.0..=80.0).contains(&mean), "mean episode length {mean}");
    }

    #[test]
    fn surviving_the_whole_episode_scores_twice_its_length() {
        let mut env = PreyEnv::new(PreyConfig { predators: 1, ..PreyConfig::default() }).unwrap();
        env.reset(0);
        let mut total = 0.0;
        loop {
            // park the predator far away every step
            env.state_mut().predators[0] = (0, 0);
            env.state_mut().headings[0] = (-1, -1);
            let out = env.step(&[0; 4]).unwrap();
            total += out.team_reward;
            if out.done {
                break;
            }
        }
        assert_eq!((env.step_index(), total), (200, 400.0));
    }

    #[test]
    fn catching_every_sink_ends_the_episode() {
        let mut env = PreyEnv::new(PreyConfig::default()).unwrap();
        env.reset(3);
        let sinks = [env.state().preys[2], env.state().preys[3]];
        let st = env.state_mut();
        st.alive = [true; 4];
        st.predators = sinks.to_vec();
        st.step = 49;
        let out = env.step(&[0; 4]).unwrap();
        assert!(out.done);
        assert_eq!(out.team_reward, 0.0);
        assert_eq!(env.step_index(), 50);
        assert_eq!(env.step(&[0; 4]), Err(EnvError::EpisodeOver));
    }

    #[test]
    fn child_is_held_on_the_leash() {
        let mut env = PreyEnv::new(PreyConfig::default()).unwrap();
        env.reset(0);
        let root = env.state().preys[0];
        {
            let st = env.state_mut();
            st.preys[1] = (root.0 + 5, root.1);
        }
        // root stays, mid tries to step a sixth cell away
        env.step(&[0, 7, 0, 0]).unwrap();
        assert_eq!(env.state().preys[1], (root.0 + 5, root.1));
        env.check_invariants().unwrap();
    }

    #[test]
    fn same_seed_same_trajectory() {
        let mut env = PreyEnv::new(PreyConfig::default()).unwrap();
        let a = random_episode(&mut env, 17);
        let sa = env.state().clone();
        let b = random_episode(&mut env, 17);
        assert_eq!(a, b);
        assert_eq!(&sa, env.state());
    }
}
