use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig};
use super::trial::{run_trial_with, TrialResult};
use crate::error::{Error, Result};
use crate::oracle::OracleSolution;

/// Sample mean and standard deviation (N - 1 denominator; absent below two
/// samples).
pub fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    if xs.is_empty() {
        return (f64::NAN, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub experiment_id: String,
    pub config: ExperimentConfig,
    pub mean_steps: f64,
    pub std_steps: Option<f64>,
    pub mean_episodes: f64,
    pub std_episodes: Option<f64>,
    /// Mean over the trials that reached T-convergence; absent for learners
    /// without a transition table or when no trial did.
    pub mean_t_episodes: Option<f64>,
    pub converged_trials: usize,
    pub trials: Vec<TrialResult>,
}

impl AggregateResult {
    pub fn from_trials(config: &ExperimentConfig, trials: Vec<TrialResult>) -> Self {
        let steps: Vec<f64> = trials
            .iter()
            .map(|t| t.steps_to_policy_convergence as f64)
            .collect();
        let episodes: Vec<f64> = trials
            .iter()
            .map(|t| t.episodes_to_policy_convergence as f64)
            .collect();
        let t_eps: Vec<f64> = trials
            .iter()
            .filter_map(|t| t.episodes_to_t_convergence.map(|e| e as f64))
            .collect();
        let (mean_steps, std_steps) = mean_std(&steps);
        let (mean_episodes, std_episodes) = mean_std(&episodes);
        Self {
            experiment_id: config.experiment_id(),
            config: config.clone(),
            mean_steps,
            std_steps,
            mean_episodes,
            std_episodes,
            mean_t_episodes: (!t_eps.is_empty()).then(|| mean_std(&t_eps).0),
            converged_trials: trials.iter().filter(|t| t.converged).count(),
            trials,
        }
    }

    pub fn all_converged(&self) -> bool {
        self.converged_trials == self.trials.len()
    }
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidParams("jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::InvalidParams(format!("thread pool: {e}"))),
    }
}

/// Runs every trial of `cfg` in parallel and aggregates in trial order.
/// `jobs` caps the worker count (`None` uses rayon's global pool).
pub fn run_experiment(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<AggregateResult> {
    cfg.check()?;
    let mdp = cfg.build_env()?;
    let oracle = OracleSolution::solve(&mdp, cfg.learner.gamma, cfg.solver_tol)?;
    let trials = with_pool(jobs, || {
        (0..cfg.trials)
            .into_par_iter()
            .map(|i| run_trial_with(&mdp, &oracle, cfg, i))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(AggregateResult::from_trials(cfg, trials))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub n_actions: usize,
    pub algorithm: Algorithm,
    pub trials: usize,
    pub converged_trials: usize,
    pub mean_steps: f64,
    pub std_steps: Option<f64>,
    pub mean_episodes: f64,
    pub std_episodes: Option<f64>,
    pub mean_t_episodes: Option<f64>,
    /// Baseline-to-this mean-episode ratio (Q-to-T for the T row), set on
    /// the rows of the compared algorithm.
    pub episode_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of log2(ratio) against log2(action count), i.e.
    /// the ratio's growth exponent per doubling of the action space.
    pub fitted_exponent: Option<f64>,
}

impl SweepResult {
    pub fn row(&self, n: usize, algorithm: Algorithm) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.algorithm == algorithm)
    }

    /// `(n, ratio)` for every swept n that has one.
    pub fn ratios(&self) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.episode_ratio.map(|q| (r.n, q)))
            .collect()
    }
}

/// Least-squares slope of `y` on `x`; `None` with fewer than two distinct x.
pub fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Runs `subject` and `baseline` at every n and pairs them by
/// baseline-to-subject mean-episode ratio. The run for each n uses
/// `base` with only the environment size and algorithm replaced.
pub fn sweep_pair(
    base: &ExperimentConfig,
    n_values: &[usize],
    subject: Algorithm,
    baseline: Algorithm,
    jobs: Option<usize>,
) -> Result<(SweepResult, Vec<AggregateResult>)> {
    if n_values.is_empty() {
        return Err(Error::InvalidParams("n_values must be non-empty".into()));
    }
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    let mut points = Vec::new();
    for &n in n_values {
        let mut per_algo = Vec::new();
        for algo in [subject, baseline] {
            let mut cfg = base.clone();
            cfg.env_params = base.env.default_params(n);
            cfg.env_params.skill_success_prob = base.env_params.skill_success_prob;
            cfg.algorithm = algo;
            per_algo.push(run_experiment(&cfg, jobs)?);
        }
        let ratio = per_algo[1].mean_episodes / per_algo[0].mean_episodes;
        let n_actions = per_algo[0].config.n_actions();
        if ratio.is_finite() && ratio > 0.0 {
            points.push(((n_actions as f64).log2(), ratio.log2()));
        }
        for (i, agg) in per_algo.iter().enumerate() {
            rows.push(SweepRow {
                n,
                n_actions,
                algorithm: agg.config.algorithm,
                trials: agg.trials.len(),
                converged_trials: agg.converged_trials,
                mean_steps: agg.mean_steps,
                std_steps: agg.std_steps,
                mean_episodes: agg.mean_episodes,
                std_episodes: agg.std_episodes,
                mean_t_episodes: agg.mean_t_episodes,
                episode_ratio: (i == 0).then_some(ratio),
            });
        }
        runs.extend(per_algo);
    }
    Ok((
        SweepResult {
            rows,
            fitted_exponent: least_squares_slope(&points),
        },
        runs,
    ))
}

/// T-learning against Q-learning over `n_values`.
pub fn sweep_actions(
    base: &ExperimentConfig,
    n_values: &[usize],
    jobs: Option<usize>,
) -> Result<(SweepResult, Vec<AggregateResult>)> {
    sweep_pair(
        base,
        n_values,
        Algorithm::TLearning,
        Algorithm::QLearning,
        jobs,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimisticRow {
    pub n: usize,
    pub baseline_mean_steps: f64,
    pub optimistic_mean_steps: f64,
    /// optimistic / baseline.
    pub ratio: f64,
}

/// Compares `base` (as given) against the same config with every value
/// table initialised to `init_value`, per n.
pub fn optimistic_study(
    base: &ExperimentConfig,
    n_values: &[usize],
    init_value: f64,
    jobs: Option<usize>,
) -> Result<Vec<OptimisticRow>> {
    n_values
        .iter()
        .map(|&n| {
            let mut cfg = base.clone();
            cfg.env_params = base.env.default_params(n);
            let baseline = run_experiment(&cfg, jobs)?;
            cfg.learner.init_value = init_value;
            let optimistic = run_experiment(&cfg, jobs)?;
            Ok(OptimisticRow {
                n,
                baseline_mean_steps: baseline.mean_steps,
                optimistic_mean_steps: optimistic.mean_steps,
                ratio: optimistic.mean_steps / baseline.mean_steps,
            })
        })
        .collect()
}
