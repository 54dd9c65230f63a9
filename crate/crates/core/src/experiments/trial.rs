use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig};
use crate::error::Result;
use crate::learners::{
    onpolicy_t_step, q_learn_step, t_learn_step, td0_step, LearnerConfig, QTable,
    TransitionValueTable, VTable,
};
use crate::mdp::{run_episode, ActionId, Agent, Mdp, StateId, StepRecord};
use crate::oracle::OracleSolution;
use crate::policy::{
    observe, q_epsilon_greedy, q_greedy_set, t_greedy_set, t_policy_select, v_greedy_set,
    v_model_policy, Counters, PolicyConfig, RewardModel, TIE_TOL,
};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    /// Actions executed before the sustained run of converged evaluations
    /// began; all steps run when the trial did not converge.
    pub steps_to_policy_convergence: u64,
    pub episodes_to_policy_convergence: u64,
    /// First episode of the final unbroken run in which the preferred
    /// successors of the learned transition values matched those of `T#`.
    pub episodes_to_t_convergence: Option<u64>,
    pub steps_run: u64,
    pub episodes_run: u64,
    pub converged: bool,
    /// Per-episode arrival counts at the traced states (the first easy-branch
    /// state, the first skill-branch state and the fall state).
    pub visit_trace: Vec<[u16; 3]>,
}

/// Read-only view of a learner for the convergence detectors.
#[derive(Debug, Clone, Copy)]
pub enum LearnerView<'a> {
    Transitions {
        table: &'a TransitionValueTable,
        counters: &'a Counters,
        kappa: f64,
    },
    Actions {
        q: &'a QTable,
    },
    States {
        v: &'a VTable,
        counters: &'a Counters,
        model: &'a RewardModel,
        gamma: f64,
        kappa: f64,
    },
}

impl LearnerView<'_> {
    /// The exploitation policy's argmax set at `s` (no exploration).
    pub fn greedy_set(&self, s: StateId) -> Vec<ActionId> {
        match *self {
            LearnerView::Transitions {
                table,
                counters,
                kappa,
            } => t_greedy_set(s, table, counters, kappa),
            LearnerView::Actions { q } => q_greedy_set(s, q),
            LearnerView::States {
                v,
                counters,
                model,
                gamma,
                kappa,
            } => v_greedy_set(s, v, counters, model, gamma, kappa),
        }
    }
}

/// True iff at every non-terminal state on the optimal paths the
/// exploitation argmax set is contained in the optimal action set.
pub fn detect_policy_convergence(
    view: &LearnerView<'_>,
    oracle: &OracleSolution,
    mdp: &Mdp,
) -> bool {
    policy_converged_on(view, oracle, &oracle.optimal_path_states(mdp))
}

fn policy_converged_on(
    view: &LearnerView<'_>,
    oracle: &OracleSolution,
    states: &[StateId],
) -> bool {
    states.iter().all(|&s| {
        let optimal = &oracle.optimal_actions[s.0];
        view.greedy_set(s).iter().all(|a| optimal.contains(a))
    })
}

fn argmax_successors(values: impl Iterator<Item = (StateId, f64)> + Clone) -> Vec<StateId> {
    let best = values
        .clone()
        .map(|x| x.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_TOL * best.abs().max(1.0);
    values
        .filter(|&(_, v)| v >= best - tol)
        .map(|(t, _)| t)
        .collect()
}

/// True iff, along the tau path from the start, the preferred successors of
/// `table` (over its observed successors) equal those of `T#`.
pub fn detect_t_convergence(
    table: &TransitionValueTable,
    oracle: &OracleSolution,
    mdp: &Mdp,
) -> bool {
    t_converged_on(table, oracle, &oracle.tau_path_states(mdp))
}

fn t_converged_on(
    table: &TransitionValueTable,
    oracle: &OracleSolution,
    states: &[StateId],
) -> bool {
    states.iter().all(|&s| {
        let seen = table.observed_successors(s);
        if seen.is_empty() {
            return false;
        }
        let learned = argmax_successors(seen.iter().map(|&t| (t, table.get(s, t))));
        let target = argmax_successors(
            oracle
                .t_sharp
                .observed_successors(s)
                .iter()
                .map(|&t| (t, oracle.t_sharp.get(s, t))),
        );
        learned == target
    })
}

enum Learner {
    Transitions {
        table: TransitionValueTable,
        counters: Counters,
        model: RewardModel,
        on_policy: bool,
        pending: Option<StepRecord>,
    },
    Actions {
        q: QTable,
    },
    States {
        v: VTable,
        counters: Counters,
        model: RewardModel,
    },
}

/// A learner plus its behaviour policy.
pub struct TrialAgent {
    learner: Learner,
    cfg: LearnerConfig,
    policy: PolicyConfig,
    terminals: Vec<bool>,
    num_actions: usize,
}

impl TrialAgent {
    pub fn new(mdp: &Mdp, algorithm: Algorithm, cfg: LearnerConfig, policy: PolicyConfig) -> Self {
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let learner = match algorithm {
            Algorithm::TLearning | Algorithm::OnpolicyT => Learner::Transitions {
                table: TransitionValueTable::new(ns, cfg.init_value),
                counters: Counters::new(ns, na),
                model: RewardModel::new(ns, na),
                on_policy: algorithm == Algorithm::OnpolicyT,
                pending: None,
            },
            Algorithm::QLearning => Learner::Actions {
                q: QTable::new(ns, na, cfg.init_value),
            },
            Algorithm::Td0Model => Learner::States {
                v: VTable::new(mdp.terminal_mask(), cfg.init_value),
                counters: Counters::new(ns, na),
                model: RewardModel::new(ns, na),
            },
        };
        Self {
            learner,
            cfg,
            policy,
            terminals: mdp.terminal_mask().to_vec(),
            num_actions: na,
        }
    }

    pub fn view(&self) -> LearnerView<'_> {
        match &self.learner {
            Learner::Transitions {
                table, counters, ..
            } => LearnerView::Transitions {
                table,
                counters,
                kappa: self.policy.kappa,
            },
            Learner::Actions { q } => LearnerView::Actions { q },
            Learner::States { v, counters, model } => LearnerView::States {
                v,
                counters,
                model,
                gamma: self.cfg.gamma,
                kappa: self.policy.kappa,
            },
        }
    }

    pub fn transition_table(&self) -> Option<&TransitionValueTable> {
        match &self.learner {
            Learner::Transitions { table, .. } => Some(table),
            _ => None,
        }
    }
}

impl Agent for TrialAgent {
    fn select_action(&mut self, s: StateId, rng: &mut RngStream) -> Result<ActionId> {
        Ok(match &self.learner {
            Learner::Transitions {
                table, counters, ..
            } => t_policy_select(s, table, counters, &self.policy, rng, self.num_actions),
            Learner::Actions { q } => q_epsilon_greedy(s, q, self.policy.epsilon, rng),
            Learner::States { v, counters, model } => {
                v_model_policy(s, v, counters, model, self.cfg.gamma, &self.policy, rng)
            }
        })
    }

    fn observe(&mut self, rec: &StepRecord, terminal: bool) {
        match &mut self.learner {
            Learner::Transitions {
                table,
                counters,
                model,
                on_policy,
                pending,
            } => {
                observe(counters, model, rec);
                if *on_policy {
                    if let Some(prev) = pending.take() {
                        // `prev.s_next == rec.s` holds within an episode.
                        let _ = onpolicy_t_step(table, &prev, Some(rec), &self.cfg);
                    }
                    if terminal {
                        let _ = onpolicy_t_step(table, rec, None, &self.cfg);
                    } else {
                        *pending = Some(*rec);
                    }
                } else {
                    t_learn_step(table, rec, &self.cfg, &self.terminals);
                }
            }
            Learner::Actions { q } => q_learn_step(q, rec, &self.cfg, &self.terminals),
            Learner::States { v, counters, model } => {
                observe(counters, model, rec);
                td0_step(v, rec, &self.cfg, &self.terminals);
            }
        }
    }

    fn end_episode(&mut self, _truncated: bool) {
        if let Learner::Transitions { pending, .. } = &mut self.learner {
            *pending = None;
        }
    }
}

/// Builds the environment and its oracle, then runs one trial.
pub fn run_trial(cfg: &ExperimentConfig, trial_index: usize) -> Result<TrialResult> {
    cfg.check()?;
    let mdp = cfg.build_env()?;
    let oracle = OracleSolution::solve(&mdp, cfg.learner.gamma, cfg.solver_tol)?;
    run_trial_with(&mdp, &oracle, cfg, trial_index)
}

/// Runs one trial against a prepared environment and oracle.
///
/// The policy is evaluated every `eval_every` episodes by argmax inspection
/// only; no environment steps are spent on evaluation. The trial stops once
/// `convergence_window` consecutive evaluations pass, or at the step cap.
pub fn run_trial_with(
    mdp: &Mdp,
    oracle: &OracleSolution,
    cfg: &ExperimentConfig,
    trial_index: usize,
) -> Result<TrialResult> {
    let mut rng = RngStream::for_trial(cfg.master_seed, trial_index as u64);
    let seed = rng.seed();
    let mut agent = TrialAgent::new(mdp, cfg.algorithm, cfg.learner, cfg.policy);
    let policy_states = oracle.optimal_path_states(mdp);
    let tau_states = oracle.tau_path_states(mdp);
    let traced = cfg.traced_states();

    let mut steps: u64 = 0;
    let mut episodes: u64 = 0;
    let mut streak = 0usize;
    let mut streak_start = (0u64, 0u64);
    let mut t_start: Option<u64> = None;
    let mut converged = false;
    let mut visit_trace = Vec::new();

    while steps < cfg.max_steps {
        let trace = run_episode(mdp, &mut agent, &mut rng, cfg.max_episode_steps)?;
        episodes += 1;
        steps += trace.len() as u64;
        if cfg.record_traces {
            let mut row = [0u16; 3];
            for rec in &trace.steps {
                for (slot, &t) in row.iter_mut().zip(&traced) {
                    if rec.s_next == t {
                        *slot = slot.saturating_add(1);
                    }
                }
            }
            visit_trace.push(row);
        }
        if let Some(table) = agent.transition_table() {
            if t_converged_on(table, oracle, &tau_states) {
                t_start.get_or_insert(episodes);
            } else {
                t_start = None;
            }
        }
        if episodes % cfg.eval_every as u64 == 0 {
            if policy_converged_on(&agent.view(), oracle, &policy_states) {
                if streak == 0 {
                    streak_start = (episodes, steps);
                }
                streak += 1;
                if streak >= cfg.convergence_window {
                    converged = true;
                    break;
                }
            } else {
                streak = 0;
            }
        }
    }

    let (episodes_to_policy, steps_to_policy) = if converged {
        streak_start
    } else {
        (episodes, steps)
    };
    Ok(TrialResult {
        trial: trial_index,
        seed,
        steps_to_policy_convergence: steps_to_policy,
        episodes_to_policy_convergence: episodes_to_policy,
        episodes_to_t_convergence: t_start,
        steps_run: steps,
        episodes_run: episodes,
        converged,
        visit_trace,
    })
}

/// First episode (1-based) from which the trailing `window`-episode count of
/// visits to the skill branch exceeds that of the easy branch for the rest of
/// the trace. `None` if the preference does not hold at the end.
pub fn skill_preference_onset(trace: &[[u16; 3]], window: usize) -> Option<u64> {
    let window = window.max(1);
    let mut easy = 0i64;
    let mut skill = 0i64;
    let mut last_fail: Option<usize> = None;
    for (i, row) in trace.iter().enumerate() {
        easy += i64::from(row[0]);
        skill += i64::from(row[1]);
        if i >= window {
            easy -= i64::from(trace[i - window][0]);
            skill -= i64::from(trace[i - window][1]);
        }
        if skill <= easy {
            last_fail = Some(i);
        }
    }
    match last_fail {
        None if !trace.is_empty() => Some(1),
        Some(i) if i + 1 < trace.len() => Some(i as u64 + 2),
        _ => None,
    }
}

/// Trailing window, in episodes, for the branch-preference comparison.
pub const PREFERENCE_WINDOW: usize = 100;

/// Whether the sustained skill-branch preference of a traced trial begins
/// more than `window` episodes before its policy convergence. The onset is
/// only resolved to the width of the trailing window, so smaller leads are
/// not counted.
pub fn preference_precedes_convergence(trial: &TrialResult, window: usize) -> bool {
    match skill_preference_onset(&trial.visit_trace, window) {
        Some(onset) => onset + (window as u64) < trial.episodes_to_policy_convergence,
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::EnvKind;
    use crate::oracle::DEFAULT_TOL;

    fn st(label: usize) -> StateId {
        StateId(label - 1)
    }

    #[test]
    fn q_star_is_converged() {
        let cfg = ExperimentConfig::paper(EnvKind::Beam, 3, Algorithm::QLearning);
        let mdp = cfg.build_env().unwrap();
        let oracle = OracleSolution::solve(&mdp, 0.85, DEFAULT_TOL).unwrap();
        let view = LearnerView::Actions { q: &oracle.q_star };
        assert!(detect_policy_convergence(&view, &oracle, &mdp));
        let zero = QTable::new(mdp.num_states(), mdp.num_actions(), 0.0);
        assert!(!detect_policy_convergence(
            &LearnerView::Actions { q: &zero },
            &oracle,
            &mdp
        ));
    }

    #[test]
    fn t_convergence_cases() {
        let cfg = ExperimentConfig::paper(EnvKind::Beam, 3, Algorithm::TLearning);
        let mdp = cfg.build_env().unwrap();
        let oracle = OracleSolution::solve(&mdp, 0.85, DEFAULT_TOL).unwrap();
        assert!(detect_t_convergence(&oracle.t_sharp, &oracle, &mdp));
        let empty = TransitionValueTable::new(mdp.num_states(), 0.0);
        assert!(!detect_t_convergence(&empty, &oracle, &mdp));
        let mut wrong = oracle.t_sharp.clone();
        wrong.seed(st(1), st(2), 1.0);
        assert!(!detect_t_convergence(&wrong, &oracle, &mdp));
    }

    #[test]
    fn preference_onset() {
        let e = [1, 0, 0];
        let k = [0, 1, 0];
        let trace = vec![e, e, e, k, k, k, k, k];
        assert_eq!(skill_preference_onset(&trace, 2), Some(5));
        assert_eq!(skill_preference_onset(&trace, 1), Some(4));
        assert_eq!(skill_preference_onset(&[k, k], 3), Some(1));
        assert_eq!(skill_preference_onset(&[k, e], 1), None);
        assert_eq!(skill_preference_onset(&[], 1), None);
    }

    #[test]
    fn tiny_trial_converges_and_is_deterministic() {
        let mut cfg = ExperimentConfig::paper(EnvKind::Small, 1, Algorithm::TLearning);
        cfg.record_traces = true;
        let a = run_trial(&cfg, 3).unwrap();
        assert!(a.converged);
        assert!(a.steps_to_policy_convergence < 10_000);
        assert!(a.steps_to_policy_convergence >= a.episodes_to_policy_convergence);
        assert_eq!(a.visit_trace.len() as u64, a.episodes_run);
        assert_eq!(run_trial(&cfg, 3).unwrap(), a);
    }

    #[test]
    fn cap_stops_unconverged_trial() {
        let mut cfg = ExperimentConfig::paper(EnvKind::Beam, 50, Algorithm::TLearning);
        cfg.max_steps = 1;
        let r = run_trial(&cfg, 0).unwrap();
        assert!(!r.converged);
        assert_eq!(r.episodes_run, 1);
    }
}
