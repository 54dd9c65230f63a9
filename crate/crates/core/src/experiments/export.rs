//! CSV and JSON export of experiment results.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::aggregate::{AggregateResult, SweepResult};
use crate::error::{Error, Result};

pub const TRIAL_COLUMNS: [&str; 10] = [
    "experiment_id",
    "algorithm",
    "env",
    "n_actions",
    "trial",
    "seed",
    "steps_to_policy_convergence",
    "episodes_to_policy_convergence",
    "episodes_to_t_convergence",
    "converged",
];

pub const TRACE_COLUMNS: [&str; 5] = [
    "trial",
    "episode",
    "visits_state_2",
    "visits_state_3",
    "visits_state_16",
];

pub const SWEEP_COLUMNS: [&str; 12] = [
    "n",
    "n_actions",
    "algorithm",
    "trials",
    "converged_trials",
    "mean_steps",
    "std_steps",
    "mean_episodes",
    "std_episodes",
    "mean_t_episodes",
    "episode_ratio",
    "fitted_exponent",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub experiment_id: String,
    pub algorithm: String,
    pub env: String,
    pub n_actions: usize,
    pub trial: usize,
    pub seed: u64,
    pub steps_to_policy_convergence: u64,
    pub episodes_to_policy_convergence: u64,
    pub episodes_to_t_convergence: Option<u64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub trial: usize,
    pub episode: u64,
    pub visits_state_2: u16,
    pub visits_state_3: u16,
    pub visits_state_16: u16,
}

#[derive(Serialize)]
struct SweepCsvRow<'a> {
    n: usize,
    n_actions: usize,
    algorithm: &'a str,
    trials: usize,
    converged_trials: usize,
    mean_steps: f64,
    std_steps: Option<f64>,
    mean_episodes: f64,
    std_episodes: Option<f64>,
    mean_t_episodes: Option<f64>,
    episode_ratio: Option<f64>,
    fitted_exponent: Option<f64>,
}

pub fn trial_rows(result: &AggregateResult) -> impl Iterator<Item = TrialRow> + '_ {
    let cfg = &result.config;
    result.trials.iter().map(move |t| TrialRow {
        experiment_id: result.experiment_id.clone(),
        algorithm: cfg.algorithm.as_str().to_string(),
        env: cfg.env.as_str().to_string(),
        n_actions: cfg.n_actions(),
        trial: t.trial,
        seed: t.seed,
        steps_to_policy_convergence: t.steps_to_policy_convergence,
        episodes_to_policy_convergence: t.episodes_to_policy_convergence,
        episodes_to_t_convergence: t.episodes_to_t_convergence,
        converged: t.converged,
    })
}

fn finish(wtr: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::Agent(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One row per trial across all `results`, header included even when empty.
pub fn trials_csv(results: &[AggregateResult]) -> Result<String> {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    wtr.write_record(TRIAL_COLUMNS)?;
    for r in results {
        for row in trial_rows(r) {
            wtr.serialize(row)?;
        }
    }
    finish(wtr)
}

/// One row per recorded episode of every trial; episodes are 1-based.
pub fn traces_csv(result: &AggregateResult) -> Result<String> {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    wtr.write_record(TRACE_COLUMNS)?;
    for t in &result.trials {
        for (i, v) in t.visit_trace.iter().enumerate() {
            wtr.serialize(TraceRow {
                trial: t.trial,
                episode: i as u64 + 1,
                visits_state_2: v[0],
                visits_state_3: v[1],
                visits_state_16: v[2],
            })?;
        }
    }
    finish(wtr)
}

/// One row per (n, algorithm). The fitted exponent repeats on every row.
pub fn sweep_csv(sweep: &SweepResult) -> Result<String> {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    wtr.write_record(SWEEP_COLUMNS)?;
    for r in &sweep.rows {
        wtr.serialize(SweepCsvRow {
            n: r.n,
            n_actions: r.n_actions,
            algorithm: r.algorithm.as_str(),
            trials: r.trials,
            converged_trials: r.converged_trials,
            mean_steps: r.mean_steps,
            std_steps: r.std_steps,
            mean_episodes: r.mean_episodes,
            std_episodes: r.std_episodes,
            mean_t_episodes: r.mean_t_episodes,
            episode_ratio: r.episode_ratio,
            fitted_exponent: sweep.fitted_exponent,
        })?;
    }
    finish(wtr)
}

/// Parses a trial CSV back into rows, checking the header.
pub fn read_trials_csv(text: &str) -> Result<Vec<TrialRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(TRIAL_COLUMNS) {
        return Err(Error::parse(
            1,
            format!(
                "unexpected header `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn aggregate_from_json(text: &str) -> Result<AggregateResult> {
    Ok(serde_json::from_str(text)?)
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so a failed write never leaves a partial file behind.
/// Existing non-regular targets (devices, pipes) are written in place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Ok(meta) = std::fs::metadata(path) {
        if !meta.is_file() {
            return std::fs::write(path, contents).map_err(|e| Error::io(path, e));
        }
    }
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
