//! Experiment plumbing: configuration, episode logs, metrics, plots and the
//! command-line front end.

mod config;
mod log;
mod metrics;
mod plot;

pub use config::{ConfigError, ExperimentConfig, RawConfig};
pub use log::{column_names, read_episode_csv, write_episode_csv, write_timings, LOG_HEADER};
pub use metrics::{histogram, median, min_max_normalize, moving_average, summarize, Histogram, Summary};
pub use plot::{render_svg, PlotOptions, Series};

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::orchestrator::{self, ActMode, Agents, EpisodeLog, OrchestratorError, Trainer};
use crate::reward_flow::RewardBaseline;
use crate::rng::derive_seed;
use crate::theory::{self, TheoryError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("empty series")]
    EmptySeries,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Csv(e.to_string())
    }
}

/// Worker count for parallel evaluation: `DAGMARL_THREADS` if set to a
/// positive integer, otherwise rayon's default.
pub fn thread_count() -> Option<usize> {
    std::env::var("DAGMARL_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

fn with_threads<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| HarnessError::InvalidArgument(e.to_string()))?;
    Ok(pool.install(f))
}

fn write_baseline(path: &Path, b: &RewardBaseline) -> Result<(), HarnessError> {
    fs::write(path, format!("{} {}\n", b.r_bar, b.n_bar))?;
    Ok(())
}

fn read_baseline(path: &Path) -> Result<RewardBaseline, HarnessError> {
    if !path.exists() {
        return Ok(RewardBaseline::default());
    }
    let text = fs::read_to_string(path)?;
    let nums: Vec<f64> = text.split_whitespace().filter_map(|s| s.parse().ok()).collect();
    match nums[..] {
        [r_bar, n_bar] => Ok(RewardBaseline { r_bar, n_bar }),
        _ => Err(HarnessError::Csv(format!("malformed baseline file {}", path.display()))),
    }
}

pub struct TrainOutput {
    pub logs: Vec<EpisodeLog>,
    pub agents: Agents,
    pub baseline: RewardBaseline,
}

/// Trains and writes `episodes.csv`, `timings.csv`, `baseline.txt` and
/// `checkpoints/` under the configured output directory.
pub fn run_training(cfg: &ExperimentConfig) -> Result<TrainOutput, HarnessError> {
    fs::create_dir_all(&cfg.out)?;
    let mut trainer = Trainer::from_kind(&cfg.env, cfg.train.clone())?;
    let mut logs = Vec::with_capacity(cfg.train.episodes);
    let mut seconds = Vec::with_capacity(cfg.train.episodes);
    for _ in 0..cfg.train.episodes {
        let t0 = Instant::now();
        logs.push(trainer.run_episode()?);
        seconds.push(t0.elapsed().as_secs_f64());
    }
    write_episode_csv(&logs, BufWriter::new(File::create(cfg.out.join("episodes.csv"))?))?;
    write_timings(&seconds, BufWriter::new(File::create(cfg.out.join("timings.csv"))?))?;
    let baseline = trainer.baseline();
    let agents = trainer.into_agents();
    agents.save(&cfg.out.join("checkpoints"))?;
    write_baseline(&cfg.out.join("checkpoints").join("baseline.txt"), &baseline)?;
    Ok(TrainOutput { logs, agents, baseline })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rewards: Vec<f64>,
    pub histogram: Histogram,
    pub summary: Summary,
}

/// Seeds of the evaluation episodes, disjoint from training by name.
pub fn evaluation_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    (0..episodes).map(|i| derive_seed(seed, &format!("eval/episode/{i}"))).collect()
}

pub fn evaluate_agents(
    agents: &Agents,
    cfg: &ExperimentConfig,
    baseline: RewardBaseline,
    seeds: &[u64],
    mode: ActMode,
) -> Result<EvalReport, HarnessError> {
    let logs = with_threads(|| orchestrator::evaluate(agents, &cfg.env, &cfg.train, baseline, seeds, mode))??;
    let rewards: Vec<f64> = logs.iter().map(|l| l.team_reward).collect();
    Ok(EvalReport { histogram: histogram(&rewards, cfg.bins)?, summary: summarize(&rewards)?, rewards })
}

/// Loads checkpoints from `dir` and runs greedy policies on fresh seeds.
pub fn evaluate_checkpoints(cfg: &ExperimentConfig, dir: &Path, episodes: usize) -> Result<EvalReport, HarnessError> {
    let env = cfg.env.build().map_err(OrchestratorError::from)?;
    let agents = Agents::load(dir, env.contract(), &cfg.train)?;
    let baseline = read_baseline(&dir.join("baseline.txt"))?;
    evaluate_agents(&agents, cfg, baseline, &evaluation_seeds(cfg.train.seed, episodes), ActMode::Greedy)
}

pub fn write_eval_outputs(report: &EvalReport, out: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out.join("eval_rewards.csv"))?));
    w.write_record(["episode", "team_reward"])?;
    for (i, r) in report.rewards.iter().enumerate() {
        w.write_record([i.to_string(), r.to_string()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out.join("histogram.csv"))?));
    w.write_record(["lower", "upper", "count"])?;
    let h = &report.histogram;
    for (b, c) in h.counts.iter().enumerate() {
        w.write_record([h.edges[b].to_string(), h.edges[b + 1].to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Smoothed (and optionally normalised) team-reward curves from episode CSVs.
pub fn plot_logs(paths: &[PathBuf], window: usize, normalize: bool, title: &str) -> Result<String, HarnessError> {
    let mut series = Vec::with_capacity(paths.len());
    let mut schema: Option<Vec<String>> = None;
    for p in paths {
        let (rows, header) = read_episode_csv(BufReader::new(File::open(p)?))?;
        match &schema {
            Some(s) if *s != header => {
                return Err(HarnessError::SchemaMismatch(format!("{} has columns {header:?}", p.display())));
            }
            _ => schema = Some(header),
        }
        let raw: Vec<f64> = rows.iter().map(|r| r.team_reward).collect();
        let mut values = moving_average(&raw, window)?;
        if normalize {
            values = min_max_normalize(&values);
        }
        let name = p.parent().and_then(Path::file_name).or(p.file_stem()).map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        series.push(Series { name, values });
    }
    let opts = PlotOptions {
        title: title.to_string(),
        y_label: if normalize { "normalized team reward".into() } else { "team reward".into() },
        unit_y: normalize,
        ..PlotOptions::default()
    };
    render_svg(&series, &opts)
}

#[derive(Debug, Parser)]
#[command(name = "dagmarl", about = "Leader-follower multi-agent RL on task DAGs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment config file (`[section]` + `key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `section.key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut raw = match &self.config {
            Some(p) => RawConfig::load(p)?,
            None => RawConfig::default(),
        };
        for o in &self.overrides {
            raw.set_override(o)?;
        }
        if let Some(m) = &self.mode {
            raw.set("experiment.mode", m);
        }
        if let Some(s) = self.seed {
            raw.set("experiment.seed", s);
        }
        if let Some(e) = self.episodes {
            raw.set("experiment.episodes", e);
        }
        if let Some(o) = &self.out {
            raw.set("experiment.out", o.display());
        }
        Ok(ExperimentConfig::from_raw(&raw)?)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a run and write its episode log and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run frozen policies on fresh scenarios and report a histogram.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory (defaults to `<out>/checkpoints`).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Check the synthetic-value lower bound on random micro environments.
    VerifyTheorem {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        /// Truncation tolerance on the value tails.
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Draw smoothed reward curves from episode CSVs.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, default_value_t = 100)]
        window: usize,
        #[arg(long)]
        normalize: bool,
        #[arg(long, default_value = "")]
        title: String,
        #[arg(long, default_value = "plot.svg")]
        out: PathBuf,
    },
}

fn execute(cmd: Command, stdout: &mut dyn Write) -> Result<i32, HarnessError> {
    match cmd {
        Command::Train { common } => {
            let cfg = common.resolve()?;
            let out = run_training(&cfg)?;
            let last: Vec<f64> = out.logs.iter().rev().take(cfg.window).map(|l| l.team_reward).collect();
            writeln!(stdout, "mode {} seed {} episodes {}", cfg.train.mode, cfg.train.seed, out.logs.len())?;
            if !last.is_empty() {
                writeln!(stdout, "mean team reward over last {} episodes: {:.4}", last.len(), summarize(&last)?.mean)?;
            }
            writeln!(stdout, "wrote {}", cfg.out.display())?;
            Ok(0)
        }
        Command::Evaluate { common, checkpoints, bins } => {
            let mut cfg = common.resolve()?;
            if let Some(b) = bins {
                cfg.bins = b;
                cfg.validate()?;
            }
            let dir = checkpoints.unwrap_or_else(|| cfg.out.join("checkpoints"));
            let episodes = common.episodes.unwrap_or(cfg.eval_episodes);
            let report = evaluate_checkpoints(&cfg, &dir, episodes)?;
            write_eval_outputs(&report, &cfg.out)?;
            let s = report.summary;
            writeln!(stdout, "episodes {} mean {:.4} median {:.4} std {:.4} min {:.4} max {:.4}", s.count, s.mean, s.median, s.std, s.min, s.max)?;
            Ok(0)
        }
        Command::VerifyTheorem { trials, seed, gamma, tolerance } => {
            let r = theory::run_campaign(trials, seed, gamma, tolerance)?;
            writeln!(
                stdout,
                "trials {} failures {} max_violation {:.3e} tightest_slack {:.3e} max_tight_gap {:.3e}",
                r.trials, r.failures, r.max_violation, r.tightest_slack, r.max_tight_gap
            )?;
            Ok(if r.failures == 0 { 0 } else { 1 })
        }
        Command::Plot { csv, window, normalize, title, out } => {
            let svg = plot_logs(&csv, window, normalize, &title)?;
            fs::write(&out, svg)?;
            writeln!(stdout, "wrote {}", out.display())?;
            Ok(0)
        }
    }
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 on success, 1 on runtime errors or a failed theorem
/// check, 2 on usage errors.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command, &mut std::io::stdout().lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_cli(["dagmarl", "frobnicate"]), 2);
        assert_eq!(run_cli(["dagmarl"]), 2);
        assert_eq!(run_cli(["dagmarl", "train", "--seed", "x"]), 2);
    }

    #[test]
    fn runtime_errors_exit_one() {
        assert_eq!(run_cli(["dagmarl", "train", "--config", "/nonexistent/cfg.ini"]), 1);
        assert_eq!(run_cli(["dagmarl", "train", "--mode", "qmix", "--episodes", "0"]), 1);
    }

    #[test]
    fn baseline_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("baseline.txt");
        assert_eq!(read_baseline(&p).unwrap(), RewardBaseline::default());
        let b = RewardBaseline { r_bar: -12.25, n_bar: 5.0 };
        write_baseline(&p, &b).unwrap();
        assert_eq!(read_baseline(&p).unwrap(), b);
    }
}
