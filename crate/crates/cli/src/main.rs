use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use tlearn::environments::{skill_action, EnvKind};
use tlearn::experiments::export::{sweep_csv, to_json, traces_csv, trials_csv, write_atomic};
use tlearn::experiments::{
    run_experiment, sweep_actions, AggregateResult, Algorithm, ExperimentConfig,
};
use tlearn::learners::AlphaSchedule;
use tlearn::mdp_file::{load_mdp, serialize_mdp};
use tlearn::oracle::{env_class_check, precision_check, OracleSolution, DEFAULT_TOL};
use tlearn::Mdp;

/// Environment variable naming the directory for results when `--out` is
/// not given.
const OUT_DIR_VAR: &str = "TLEARN_OUT_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "tlearn",
    version,
    about = "T-learning experiments, oracles and benchmark environments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run repeated learning trials and export one row per trial.
    Run(RunArgs),
    /// Paired T-learning / Q-learning runs over several action-space sizes.
    Sweep(SweepArgs),
    /// Solve V*, Q*, T# and the tau map of an environment.
    Oracle(OracleArgs),
    /// Check whether T#-greedy actions agree with the Q*-optimal ones.
    CheckPrecision(OracleArgs),
    /// Check the likely-observed / reliably-achievable edge conditions.
    CheckEnvClass(EnvClassArgs),
    /// Write an environment in the MDP file format.
    ExportEnv(ExportEnvArgs),
    /// Load an MDP file and report structural violations.
    Validate(ValidateArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum EnvChoice {
    Small,
    Beam,
}

impl From<EnvChoice> for EnvKind {
    fn from(e: EnvChoice) -> Self {
        match e {
            EnvChoice::Small => EnvKind::Small,
            EnvChoice::Beam => EnvKind::Beam,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum AlgoChoice {
    #[value(name = "t_learning", alias = "t-learning")]
    TLearning,
    #[value(name = "q_learning", alias = "q-learning")]
    QLearning,
    #[value(name = "td0_model", alias = "td0-model")]
    Td0Model,
    #[value(name = "onpolicy_t", alias = "onpolicy-t")]
    OnpolicyT,
}

impl From<AlgoChoice> for Algorithm {
    fn from(a: AlgoChoice) -> Self {
        match a {
            AlgoChoice::TLearning => Algorithm::TLearning,
            AlgoChoice::QLearning => Algorithm::QLearning,
            AlgoChoice::Td0Model => Algorithm::Td0Model,
            AlgoChoice::OnpolicyT => Algorithm::OnpolicyT,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ScheduleChoice {
    Constant,
    Harmonic,
}

/// Environment selection. Values left unset keep the environment defaults.
#[derive(Args, Debug, Clone)]
struct EnvArgs {
    /// Benchmark environment [default: beam]
    #[arg(long, value_enum)]
    env: Option<EnvChoice>,
    /// Typical-action count per branch; the action space has 2n+1 actions [default: 50]
    #[arg(long)]
    n: Option<usize>,
    /// Beam length in hops [default: 6 for beam, 1 for small]
    #[arg(long)]
    beam_hops: Option<usize>,
    /// Success probability of the skilled action [default: 1]
    #[arg(long)]
    skill_prob: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct HyperArgs {
    /// Learning rate [default: 0.5]
    #[arg(long)]
    alpha: Option<f64>,
    /// Discount factor [default: 0.85]
    #[arg(long)]
    gamma: Option<f64>,
    /// Exploration rate [default: 0.1]
    #[arg(long)]
    epsilon: Option<f64>,
    /// Optimism weight for untried actions [default: 0.75]
    #[arg(long)]
    kappa: Option<f64>,
    /// Initial value of every table entry [default: 0]
    #[arg(long)]
    init_value: Option<f64>,
    /// Step-size schedule [default: constant]
    #[arg(long, value_enum)]
    alpha_schedule: Option<ScheduleChoice>,
    /// Trials per experiment [default: 50]
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed; trial seeds are derived from it [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Consecutive passing evaluations required for convergence [default: 50]
    #[arg(long)]
    window: Option<usize>,
    /// Episodes between convergence evaluations [default: 10]
    #[arg(long)]
    eval_every: Option<usize>,
    /// Step cap per trial [default: 5000000]
    #[arg(long)]
    max_steps: Option<u64>,
    /// Experiment config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (results do not depend on it) [default: all cores]
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Learning algorithm [default: t_learning]
    #[arg(long, value_enum)]
    algo: Option<AlgoChoice>,
    /// Output file [default: stdout, or $TLEARN_OUT_DIR/<experiment id>.<ext>]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-episode visit traces (CSV) to this file
    #[arg(long)]
    traces: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Comma-separated typical-action counts
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32,64")]
    n_list: Vec<usize>,
    /// Also write the per-trial rows of every run to this file
    #[arg(long)]
    trials_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Load the MDP from a file instead of generating it
    #[arg(long, conflicts_with_all = ["env", "n", "beam_hops", "skill_prob"])]
    mdp: Option<PathBuf>,
    /// Remove the skilled action from the environment
    #[arg(long)]
    no_skill_action: bool,
    /// Discount factor [default: 0.85]
    #[arg(long, default_value_t = 0.85)]
    gamma: f64,
    /// Solver tolerance
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args, Debug)]
struct EnvClassArgs {
    #[command(flatten)]
    oracle: OracleArgs,
    /// Threshold of the environment-class conditions
    #[arg(long, default_value_t = 0.1)]
    epsilon_env: f64,
}

#[derive(Args, Debug)]
struct ExportEnvArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Remove the skilled action from the environment
    #[arg(long)]
    no_skill_action: bool,
    /// Output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// MDP file to check
    path: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

/// Paper defaults, overlaid by the config file, overlaid by flags.
fn experiment_config(
    env: &EnvArgs,
    hyper: &HyperArgs,
    algo: Option<AlgoChoice>,
) -> Result<ExperimentConfig> {
    let mut cfg = match &hyper.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_text(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::paper(EnvKind::Beam, 50, Algorithm::TLearning),
    };
    if env.env.is_some() || env.n.is_some() {
        let kind = env.env.map(EnvKind::from).unwrap_or(cfg.env);
        let n = env.n.unwrap_or(cfg.env_params.n);
        cfg.env = kind;
        cfg.env_params = kind.default_params(n);
    }
    if let Some(h) = env.beam_hops {
        cfg.env_params.beam_hops = h;
    }
    if let Some(p) = env.skill_prob {
        cfg.env_params.skill_success_prob = p;
    }
    if let Some(a) = algo {
        cfg.algorithm = a.into();
    }
    let l = &mut cfg.learner;
    if let Some(v) = hyper.alpha {
        l.alpha = v;
    }
    if let Some(v) = hyper.gamma {
        l.gamma = v;
    }
    if let Some(v) = hyper.init_value {
        l.init_value = v;
    }
    if let Some(s) = hyper.alpha_schedule {
        l.alpha_schedule = match s {
            ScheduleChoice::Constant => AlphaSchedule::Constant,
            ScheduleChoice::Harmonic => AlphaSchedule::Harmonic,
        };
    }
    if let Some(v) = hyper.epsilon {
        cfg.policy.epsilon = v;
    }
    if let Some(v) = hyper.kappa {
        cfg.policy.kappa = v;
    }
    if let Some(v) = hyper.trials {
        cfg.trials = v;
    }
    if let Some(v) = hyper.seed {
        cfg.master_seed = v;
    }
    if let Some(v) = hyper.window {
        cfg.convergence_window = v;
    }
    if let Some(v) = hyper.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = hyper.max_steps {
        cfg.max_steps = v;
    }
    cfg.check()?;
    Ok(cfg)
}

fn oracle_env(args: &OracleArgs) -> Result<Mdp> {
    let mdp = match &args.mdp {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mdp = load_mdp(&text).with_context(|| format!("parsing {}", path.display()))?;
            let violations = mdp.validate();
            if let Some(v) = violations.first() {
                bail!("{}: {v}", path.display());
            }
            mdp
        }
        None => build_env(&args.env)?,
    };
    if args.no_skill_action {
        if args.mdp.is_some() {
            bail!("--no-skill-action applies to generated environments only");
        }
        let n = args.env.n.unwrap_or(50);
        return Ok(mdp.without_action(skill_action(n))?);
    }
    Ok(mdp)
}

fn build_env(env: &EnvArgs) -> Result<Mdp> {
    let kind: EnvKind = env.env.unwrap_or(EnvChoice::Beam).into();
    let mut params = kind.default_params(env.n.unwrap_or(50));
    if let Some(h) = env.beam_hops {
        params.beam_hops = h;
    }
    if let Some(p) = env.skill_prob {
        params.skill_success_prob = p;
    }
    Ok(kind.build(&params)?)
}

/// Writes `contents` to `out`, to `$TLEARN_OUT_DIR/<default_name>`, or to
/// stdout, in that order of preference.
fn emit(out: Option<&Path>, default_name: &str, contents: &str) -> Result<()> {
    let target = match out {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os(OUT_DIR_VAR).map(|d| PathBuf::from(d).join(default_name)),
    };
    match target {
        Some(path) => write_atomic(&path, contents.as_bytes())
            .with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn ext(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}

fn report_convergence(results: &[AggregateResult]) -> bool {
    let mut all = true;
    for r in results {
        if !r.all_converged() {
            all = false;
            eprintln!(
                "warning: {}: {} of {} trials did not converge within the step cap",
                r.experiment_id,
                r.trials.len() - r.converged_trials,
                r.trials.len()
            );
        }
    }
    all
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let mut cfg = experiment_config(&args.env, &args.hyper, args.algo)?;
    cfg.record_traces |= args.traces.is_some();
    let agg = run_experiment(&cfg, args.hyper.jobs)?;
    let body = match args.format {
        Format::Csv => trials_csv(std::slice::from_ref(&agg))?,
        Format::Json => to_json(&agg)? + "\n",
    };
    emit(
        args.out.as_deref(),
        &format!("{}.{}", agg.experiment_id, ext(args.format)),
        &body,
    )?;
    if let Some(path) = &args.traces {
        write_atomic(path, traces_csv(&agg)?.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!(
        "{}: mean steps {:.1}, mean episodes {:.1}, {}/{} converged",
        agg.experiment_id,
        agg.mean_steps,
        agg.mean_episodes,
        agg.converged_trials,
        agg.trials.len()
    );
    Ok(if report_convergence(&[agg]) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_sweep(args: &SweepArgs) -> Result<ExitCode> {
    if args.n_list.is_empty() {
        bail!("--n-list must name at least one value");
    }
    let cfg = experiment_config(&args.env, &args.hyper, None)?;
    let (sweep, runs) = sweep_actions(&cfg, &args.n_list, args.hyper.jobs)?;
    let body = match args.format {
        Format::Csv => sweep_csv(&sweep)?,
        Format::Json => to_json(&sweep)? + "\n",
    };
    emit(
        args.out.as_deref(),
        &format!(
            "sweep-{}-seed{}.{}",
            cfg.env,
            cfg.master_seed,
            ext(args.format)
        ),
        &body,
    )?;
    if let Some(path) = &args.trials_out {
        write_atomic(path, trials_csv(&runs)?.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if report_convergence(&runs) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn label_list<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_oracle(args: &OracleArgs) -> Result<ExitCode> {
    let mdp = oracle_env(args)?;
    let sol = OracleSolution::solve(&mdp, args.gamma, args.tol)?;
    let labels = |xs: &[tlearn::ActionId]| xs.iter().map(|a| a.label()).collect::<Vec<_>>();
    let states: Vec<_> = mdp
        .states()
        .map(|s| {
            json!({
                "state": s.label(),
                "terminal": mdp.is_terminal(s),
                "v_star": sol.v_star[s.0],
                "optimal_actions": labels(&sol.optimal_actions[s.0]),
                "t_greedy_actions": labels(&sol.t_greedy_actions[s.0]),
                "tau": sol.tau[s.0].map(|t| t.label()),
            })
        })
        .collect();
    let t_sharp: Vec<_> = sol
        .t_sharp
        .entries()
        .map(|(s, t, v)| json!({"state": s.label(), "next": t.label(), "value": v}))
        .collect();
    match args.format {
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(
                &json!({"mdp": mdp.name(), "gamma": args.gamma, "states": states, "t_sharp": t_sharp})
            )?
        ),
        Format::Csv => {
            println!("state,terminal,v_star,optimal_actions,t_greedy_actions,tau");
            for s in mdp.states() {
                println!(
                    "{},{},{},{},{},{}",
                    s,
                    mdp.is_terminal(s),
                    sol.v_star[s.0],
                    label_list(&sol.optimal_actions[s.0]),
                    label_list(&sol.t_greedy_actions[s.0]),
                    sol.tau[s.0].map(|t| t.to_string()).unwrap_or_default()
                );
            }
            println!("\nstate,next,t_sharp");
            for (s, t, v) in sol.t_sharp.entries() {
                println!("{s},{t},{v}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check_precision(args: &OracleArgs) -> Result<ExitCode> {
    let mdp = oracle_env(args)?;
    let report = precision_check(&mdp, args.gamma, args.tol)?;
    match args.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Format::Csv => {
            println!("holds: {}", report.holds);
            for row in report.mismatches() {
                println!(
                    "state {}: T#-greedy {{{}}} vs Q*-optimal {{{}}}",
                    row.state,
                    label_list(&row.t_greedy),
                    label_list(&row.q_optimal)
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check_env_class(args: &EnvClassArgs) -> Result<ExitCode> {
    let mdp = oracle_env(&args.oracle)?;
    let report = env_class_check(&mdp, args.oracle.gamma, args.epsilon_env)?;
    match args.oracle.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Format::Csv => {
            println!("holds: {}", report.holds);
            println!(
                "state,tau,mean_prob,best_prob,best_action,likely_observed,reliably_achievable"
            );
            for e in &report.edges {
                println!(
                    "{},{},{},{},{},{},{}",
                    e.state,
                    e.tau,
                    e.mean_prob,
                    e.best_prob,
                    e.best_action,
                    e.likely_observed,
                    e.reliably_achievable
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_export_env(args: &ExportEnvArgs) -> Result<ExitCode> {
    let mut mdp = build_env(&args.env)?;
    if args.no_skill_action {
        mdp = mdp.without_action(skill_action(args.env.n.unwrap_or(50)))?;
    }
    let text = serialize_mdp(&mdp);
    match &args.out {
        Some(path) => write_atomic(path, text.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(args: &ValidateArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.path)
        .with_context(|| format!("reading {}", args.path.display()))?;
    let mdp = load_mdp(&text).with_context(|| format!("parsing {}", args.path.display()))?;
    let violations: Vec<String> = mdp.validate().iter().map(|v| v.to_string()).collect();
    match args.format {
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(
                &json!({"valid": violations.is_empty(), "violations": violations})
            )?
        ),
        Format::Csv => {
            if violations.is_empty() {
                println!(
                    "valid: {} states, {} actions",
                    mdp.num_states(),
                    mdp.num_actions()
                );
            }
            for v in &violations {
                println!("{v}");
            }
        }
    }
    Ok(if violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Exit code 2 is reserved for experiments that did not converge.
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::CheckPrecision(a) => cmd_check_precision(a),
        Command::CheckEnvClass(a) => cmd_check_env_class(a),
        Command::ExportEnv(a) => cmd_export_env(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
