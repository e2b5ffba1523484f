pub mod dag;
pub mod env;
pub mod harness;
pub mod nn;
pub mod orchestrator;
pub mod ppo;
pub mod reward_flow;
pub mod rng;
pub mod theory;
