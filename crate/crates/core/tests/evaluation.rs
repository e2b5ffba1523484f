use dagmarl::dag::DagTopology;
use dagmarl::env::{EnvKind, MicroSpec};
use dagmarl::harness::{evaluate_agents, evaluation_seeds, ExperimentConfig};
use dagmarl::orchestrator::{ActMode, Agents, RunMode, TrainConfig};
use dagmarl::reward_flow::RewardBaseline;
use dagmarl::rng::stream;
use dagmarl::theory::{exact_values, Method, TabularPolicy};

fn micro_config(spec: MicroSpec) -> ExperimentConfig {
    ExperimentConfig {
        env: EnvKind::Micro(Box::new(spec)),
        train: TrainConfig { mode: RunMode::Srm, hidden: vec![8], ..TrainConfig::default() },
        ..ExperimentConfig::default()
    }
}

fn uniform_agents(cfg: &ExperimentConfig) -> Agents {
    let env = cfg.env.build().unwrap();
    let mut agents = Agents::new(env.contract(), &cfg.train).unwrap();
    for f in &mut agents.followers {
        f.policy.params_mut().fill(0.0);
    }
    agents
}

#[test]
fn uniform_policy_matches_the_exact_expectation() {
    let topo = DagTopology::new(3, &[(0, 1), (1, 2)]).unwrap();
    let spec = MicroSpec::random(topo, 6, &mut stream(21, "spec")).unwrap();
    let cfg = micro_config(spec.clone());
    let agents = uniform_agents(&cfg);
    let seeds = evaluation_seeds(5, 4000);
    let report = evaluate_agents(&agents, &cfg, RewardBaseline::default(), &seeds, ActMode::Sample).unwrap();

    let uniform = TabularPolicy {
        rows: (0..3).map(|i| vec![vec![1.0 / spec.n_actions[i] as f64; spec.n_actions[i]]; spec.n_states[i]]).collect(),
    };
    // γ this close to 1 changes a 6-step sum by < 1e-10
    let expected = exact_values(&spec, &uniform, 1.0 - 1e-12, 6, Method::Enumeration)
        .or_else(|_| exact_values(&spec, &uniform, 1.0 - 1e-12, 6, Method::DynamicProgramming))
        .unwrap()
        .total();
    let se = report.summary.std / (seeds.len() as f64).sqrt();
    assert!(
        (report.summary.mean - expected).abs() <= 3.0 * se,
        "mean {} expected {expected} se {se}",
        report.summary.mean
    );
}

#[test]
fn zero_reward_environment_gives_one_bin() {
    let cfg = micro_config(MicroSpec::constant(0.0, 5));
    let agents = uniform_agents(&cfg);
    let seeds = evaluation_seeds(1, 50);
    let report = evaluate_agents(&agents, &cfg, RewardBaseline::default(), &seeds, ActMode::Greedy).unwrap();
    assert_eq!(report.histogram.counts, vec![50]);
    assert_eq!(report.histogram.edges, vec![0.0, 0.0]);
    assert_eq!(report.summary.mean, 0.0);
}

#[test]
fn same_seeds_same_histogram() {
    let topo = DagTopology::new(2, &[(0, 1)]).unwrap();
    let spec = MicroSpec::random(topo, 8, &mut stream(3, "spec")).unwrap();
    let cfg = micro_config(spec);
    let agents = uniform_agents(&cfg);
    let seeds = evaluation_seeds(9, 200);
    let a = evaluate_agents(&agents, &cfg, RewardBaseline::default(), &seeds, ActMode::Sample).unwrap();
    let b = evaluate_agents(&agents, &cfg, RewardBaseline::default(), &seeds, ActMode::Sample).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.histogram.counts.len(), 30);
}
