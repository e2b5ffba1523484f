//! Episode CSV files. The first line is a version comment, followed by a
//! header row and one row per episode:
//!
//! ```text
//! # dagmarl-log v1
//! episode,team_reward,steps,goal_periods,budget,reward_0,…,sr_0,…
//! ```
//!
//! Wall-clock times go to a separate timings file so that the episode CSV of
//! a seeded run is byte-for-byte reproducible.

use std::io::{BufRead, Write};

use super::HarnessError;
use crate::orchestrator::EpisodeLog;

pub const LOG_HEADER: &str = "# dagmarl-log v1";

pub fn column_names(agents: usize) -> Vec<String> {
    let mut cols: Vec<String> =
        ["episode", "team_reward", "steps", "goal_periods", "budget"].iter().map(|s| s.to_string()).collect();
    cols.extend((0..agents).map(|i| format!("reward_{i}")));
    cols.extend((0..agents).map(|i| format!("sr_{i}")));
    cols
}

pub fn write_episode_csv<W: Write>(rows: &[EpisodeLog], out: W) -> Result<(), HarnessError> {
    let agents = rows.first().map_or(0, |r| r.follower_rewards.len());
    let mut out = out;
    writeln!(out, "{LOG_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(column_names(agents))?;
    for r in rows {
        if r.follower_rewards.len() != agents || r.synthetic_rewards.len() != agents {
            return Err(HarnessError::SchemaMismatch(format!("episode {} has a different agent count", r.episode)));
        }
        let mut rec = vec![
            r.episode.to_string(),
            r.team_reward.to_string(),
            r.steps.to_string(),
            r.goal_periods.to_string(),
            r.budget.to_string(),
        ];
        rec.extend(r.follower_rewards.iter().chain(&r.synthetic_rewards).map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T, HarnessError> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| HarnessError::Csv(format!("row {line}: bad value in column {i}")))
}

/// Returns the rows and the column names.
pub fn read_episode_csv<R: BufRead>(mut input: R) -> Result<(Vec<EpisodeLog>, Vec<String>), HarnessError> {
    let mut first = String::new();
    input.read_line(&mut first)?;
    if first.trim_end() != LOG_HEADER {
        return Err(HarnessError::SchemaMismatch(format!("expected `{LOG_HEADER}`, found `{}`", first.trim_end())));
    }
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.len() < 5 || (header.len() - 5) % 2 != 0 || header != column_names((header.len() - 5) / 2) {
        return Err(HarnessError::SchemaMismatch(format!("unexpected columns {header:?}")));
    }
    let agents = (header.len() - 5) / 2;
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let floats = (5..5 + 2 * agents).map(|i| field::<f64>(&rec, i, line)).collect::<Result<Vec<_>, _>>()?;
        let row = EpisodeLog {
            episode: field(&rec, 0, line)?,
            team_reward: field(&rec, 1, line)?,
            steps: field(&rec, 2, line)?,
            goal_periods: field(&rec, 3, line)?,
            budget: field(&rec, 4, line)?,
            follower_rewards: floats[..agents].to_vec(),
            synthetic_rewards: floats[agents..].to_vec(),
        };
        if rows.last().is_some_and(|p: &EpisodeLog| p.episode >= row.episode) {
            return Err(HarnessError::Csv(format!("row {line}: episode index not increasing")));
        }
        rows.push(row);
    }
    Ok((rows, header))
}

pub fn write_timings<W: Write>(seconds: &[f64], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "seconds"])?;
    for (i, s) in seconds.iter().enumerate() {
        w.write_record([i.to_string(), format!("{s:.6}")])?;
    }
    w.flush()?;
    Ok(())
}
