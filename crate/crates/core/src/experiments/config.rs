use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::environments::{EnvKind, SkillEnvParams};
use crate::error::{Error, Result};
use crate::learners::{AlphaSchedule, LearnerConfig};
use crate::mdp::{Mdp, StateId, DEFAULT_MAX_STEPS};
use crate::oracle::DEFAULT_TOL;
use crate::policy::PolicyConfig;
use crate::textfmt::{parse_bool, parse_num, parse_sections};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    TLearning,
    QLearning,
    Td0Model,
    OnpolicyT,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::TLearning,
        Algorithm::QLearning,
        Algorithm::Td0Model,
        Algorithm::OnpolicyT,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::TLearning => "t_learning",
            Algorithm::QLearning => "q_learning",
            Algorithm::Td0Model => "td0_model",
            Algorithm::OnpolicyT => "onpolicy_t",
        }
    }

    /// Whether the learner keeps a transition-value table.
    pub fn learns_transitions(self) -> bool {
        matches!(self, Algorithm::TLearning | Algorithm::OnpolicyT)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown algorithm `{s}`")))
    }
}

fn schedule_str(s: AlphaSchedule) -> &'static str {
    match s {
        AlphaSchedule::Constant => "constant",
        AlphaSchedule::Harmonic => "harmonic",
    }
}

fn parse_schedule(line: usize, v: &str) -> Result<AlphaSchedule> {
    match v {
        "constant" => Ok(AlphaSchedule::Constant),
        "harmonic" => Ok(AlphaSchedule::Harmonic),
        _ => Err(Error::parse(line, format!("unknown alpha_schedule `{v}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub env_params: SkillEnvParams,
    pub algorithm: Algorithm,
    pub learner: LearnerConfig,
    pub policy: PolicyConfig,
    pub trials: usize,
    pub master_seed: u64,
    /// Consecutive passing evaluations required for policy convergence.
    pub convergence_window: usize,
    /// Episodes between convergence evaluations.
    pub eval_every: usize,
    /// Safety cap on environment steps per trial.
    pub max_steps: u64,
    pub max_episode_steps: usize,
    /// Keep per-episode arrival counts for the traced states.
    pub record_traces: bool,
    pub solver_tol: f64,
}

impl ExperimentConfig {
    /// The published protocol: alpha 0.5, gamma 0.85, epsilon 0.1,
    /// kappa 0.75, 50 trials.
    pub fn paper(env: EnvKind, n: usize, algorithm: Algorithm) -> Self {
        Self {
            env,
            env_params: env.default_params(n),
            algorithm,
            learner: LearnerConfig::default(),
            policy: PolicyConfig::default(),
            trials: 50,
            master_seed: 0,
            convergence_window: 50,
            eval_every: 10,
            max_steps: 5_000_000,
            max_episode_steps: DEFAULT_MAX_STEPS,
            record_traces: false,
            solver_tol: DEFAULT_TOL,
        }
    }

    pub fn check(&self) -> Result<()> {
        self.env_params.check()?;
        self.learner.check()?;
        self.policy.check()?;
        if self.trials == 0 {
            return Err(Error::InvalidParams("trials must be at least 1".into()));
        }
        if self.convergence_window == 0 || self.eval_every == 0 {
            return Err(Error::InvalidParams(
                "convergence_window and eval_every must be at least 1".into(),
            ));
        }
        if self.max_episode_steps == 0 {
            return Err(Error::InvalidParams(
                "max_episode_steps must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn build_env(&self) -> Result<Mdp> {
        self.env.build(&self.env_params)
    }

    pub fn n_actions(&self) -> usize {
        self.env_params.num_actions()
    }

    /// States whose arrivals are traced per episode: the first state of each
    /// branch and the fall state.
    pub fn traced_states(&self) -> [StateId; 3] {
        let fall = match self.env {
            EnvKind::Small => 6,
            EnvKind::Beam => 2 * self.env_params.beam_hops + 4,
        };
        [StateId(1), StateId(2), StateId(fall - 1)]
    }

    pub fn experiment_id(&self) -> String {
        format!(
            "{}-{}-n{}-seed{}",
            self.env, self.algorithm, self.env_params.n, self.master_seed
        )
    }

    /// Renders the config in the sectioned text dialect.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let p = &self.env_params;
        let l = &self.learner;
        let _ = writeln!(out, "[experiment]");
        let _ = writeln!(out, "algorithm = {}", self.algorithm);
        let _ = writeln!(out, "trials = {}", self.trials);
        let _ = writeln!(out, "seed = {}", self.master_seed);
        let _ = writeln!(out, "convergence_window = {}", self.convergence_window);
        let _ = writeln!(out, "eval_every = {}", self.eval_every);
        let _ = writeln!(out, "max_steps = {}", self.max_steps);
        let _ = writeln!(out, "max_episode_steps = {}", self.max_episode_steps);
        let _ = writeln!(out, "record_traces = {}", self.record_traces);
        let _ = writeln!(out, "solver_tol = {}", self.solver_tol);
        let _ = writeln!(out, "\n[env]");
        let _ = writeln!(out, "kind = {}", self.env);
        let _ = writeln!(out, "n = {}", p.n);
        let _ = writeln!(out, "beam_hops = {}", p.beam_hops);
        let _ = writeln!(out, "reward_easy = {}", p.reward_easy);
        let _ = writeln!(out, "reward_skill = {}", p.reward_skill);
        let _ = writeln!(out, "skill_success_prob = {}", p.skill_success_prob);
        let _ = writeln!(out, "\n[learner]");
        let _ = writeln!(out, "alpha = {}", l.alpha);
        let _ = writeln!(out, "gamma = {}", l.gamma);
        let _ = writeln!(out, "init_value = {}", l.init_value);
        let _ = writeln!(out, "alpha_schedule = {}", schedule_str(l.alpha_schedule));
        let _ = writeln!(
            out,
            "bootstrap_includes_default = {}",
            l.bootstrap_includes_default
        );
        let _ = writeln!(out, "\n[policy]");
        let _ = writeln!(out, "epsilon = {}", self.policy.epsilon);
        let _ = writeln!(out, "kappa = {}", self.policy.kappa);
        out
    }

    /// Parses a config file. Unlisted keys keep the published defaults;
    /// the environment kind is read first so its defaults apply.
    pub fn from_text(text: &str) -> Result<Self> {
        let sections = parse_sections(text)?;
        for sec in &sections {
            if !matches!(sec.name, "experiment" | "env" | "learner" | "policy") {
                return Err(Error::parse(
                    sec.line,
                    format!("unknown section [{}]", sec.name),
                ));
            }
        }
        let find = |name: &str| sections.iter().find(|s| s.name == name);

        let mut env = EnvKind::Beam;
        let mut n = 50;
        if let Some(sec) = find("env") {
            for (line, k, v) in sec.key_values()? {
                match k {
                    "kind" => {
                        env = v
                            .parse()
                            .map_err(|e: Error| Error::parse(line, e.to_string()))?
                    }
                    "n" => n = parse_num(line, k, v)?,
                    _ => {}
                }
            }
        }
        let mut cfg = Self::paper(env, n, Algorithm::TLearning);

        if let Some(sec) = find("env") {
            let p = &mut cfg.env_params;
            for (line, k, v) in sec.key_values()? {
                match k {
                    "kind" | "n" => {}
                    "beam_hops" => p.beam_hops = parse_num(line, k, v)?,
                    "reward_easy" => p.reward_easy = parse_num(line, k, v)?,
                    "reward_skill" => p.reward_skill = parse_num(line, k, v)?,
                    "skill_success_prob" => p.skill_success_prob = parse_num(line, k, v)?,
                    other => {
                        return Err(Error::parse(line, format!("unknown env field `{other}`")))
                    }
                }
            }
        }
        if let Some(sec) = find("experiment") {
            for (line, k, v) in sec.key_values()? {
                match k {
                    "algorithm" => {
                        cfg.algorithm = v
                            .parse()
                            .map_err(|e: Error| Error::parse(line, e.to_string()))?
                    }
                    "trials" => cfg.trials = parse_num(line, k, v)?,
                    "seed" => cfg.master_seed = parse_num(line, k, v)?,
                    "convergence_window" => cfg.convergence_window = parse_num(line, k, v)?,
                    "eval_every" => cfg.eval_every = parse_num(line, k, v)?,
                    "max_steps" => cfg.max_steps = parse_num(line, k, v)?,
                    "max_episode_steps" => cfg.max_episode_steps = parse_num(line, k, v)?,
                    "record_traces" => cfg.record_traces = parse_bool(line, k, v)?,
                    "solver_tol" => cfg.solver_tol = parse_num(line, k, v)?,
                    other => {
                        return Err(Error::parse(
                            line,
                            format!("unknown experiment field `{other}`"),
                        ))
                    }
                }
            }
        }
        if let Some(sec) = find("learner") {
            let l = &mut cfg.learner;
            for (line, k, v) in sec.key_values()? {
                match k {
                    "alpha" => l.alpha = parse_num(line, k, v)?,
                    "gamma" => l.gamma = parse_num(line, k, v)?,
                    "init_value" => l.init_value = parse_num(line, k, v)?,
                    "alpha_schedule" => l.alpha_schedule = parse_schedule(line, v)?,
                    "bootstrap_includes_default" => {
                        l.bootstrap_includes_default = parse_bool(line, k, v)?
                    }
                    other => {
                        return Err(Error::parse(
                            line,
                            format!("unknown learner field `{other}`"),
                        ))
                    }
                }
            }
        }
        if let Some(sec) = find("policy") {
            for (line, k, v) in sec.key_values()? {
                match k {
                    "epsilon" => cfg.policy.epsilon = parse_num(line, k, v)?,
                    "kappa" => cfg.policy.kappa = parse_num(line, k, v)?,
                    other => {
                        return Err(Error::parse(
                            line,
                            format!("unknown policy field `{other}`"),
                        ))
                    }
                }
            }
        }
        cfg.check()?;
        Ok(cfg)
    }
}
