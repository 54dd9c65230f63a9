//! Finite tabular MDPs with arrival rewards `R(s, s')`, transition sampling
//! and episode execution.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Tolerance on kernel row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Default per-episode step cap.
pub const DEFAULT_MAX_STEPS: usize = 10_000;

/// Dense 0-based state index. Rendered 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateId(pub usize);

/// Dense 0-based action index. Rendered 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionId(pub usize);

impl StateId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }

    /// 1-based label as used in files and reports.
    #[inline]
    pub fn label(self) -> usize {
        self.0 + 1
    }

    /// Inverse of [`StateId::label`]; `None` for label 0.
    pub fn from_label(label: usize) -> Option<Self> {
        label.checked_sub(1).map(StateId)
    }
}

impl ActionId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }

    #[inline]
    pub fn label(self) -> usize {
        self.0 + 1
    }

    pub fn from_label(label: usize) -> Option<Self> {
        label.checked_sub(1).map(ActionId)
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// A finite MDP whose rewards depend only on the transition `(s, s')`.
///
/// Kernel rows are stored sparsely, sorted by successor. Rows of terminal
/// states are empty and never consulted.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    name: String,
    num_states: usize,
    num_actions: usize,
    start: StateId,
    terminal: Vec<bool>,
    kernel: Vec<Vec<(StateId, f64)>>,
    rewards: Vec<Option<f64>>,
}

impl Mdp {
    /// Creates an MDP with empty kernel rows, no terminals and no rewards.
    pub fn new(
        name: impl Into<String>,
        num_states: usize,
        num_actions: usize,
        start: StateId,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidParams(
                "an mdp needs at least one state and one action".into(),
            ));
        }
        if start.0 >= num_states {
            return Err(Error::StateOutOfRange {
                state: start.label(),
                num_states,
            });
        }
        Ok(Self {
            name: name.into(),
            num_states,
            num_actions,
            start,
            terminal: vec![false; num_states],
            kernel: vec![Vec::new(); num_states * num_actions],
            rewards: vec![None; num_states * num_states],
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.num_states).map(StateId)
    }

    pub fn actions(&self) -> impl Iterator<Item = ActionId> {
        (0..self.num_actions).map(ActionId)
    }

    pub fn non_terminal_states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.states().filter(move |&s| !self.is_terminal(s))
    }

    #[inline]
    pub fn is_terminal(&self, s: StateId) -> bool {
        self.terminal[s.0]
    }

    /// Per-state terminal flags, indexed by `StateId::index`.
    pub fn terminal_mask(&self) -> &[bool] {
        &self.terminal
    }

    pub fn terminals(&self) -> impl Iterator<Item = StateId> + '_ {
        self.states().filter(move |&s| self.is_terminal(s))
    }

    pub fn set_terminal(&mut self, s: StateId, terminal: bool) -> Result<()> {
        self.check_state(s)?;
        self.terminal[s.0] = terminal;
        Ok(())
    }

    /// Replaces the kernel row of `(s, a)`. Duplicate successors are merged;
    /// zero-probability entries are kept so that validation can see them.
    pub fn set_row(
        &mut self,
        s: StateId,
        a: ActionId,
        row: impl IntoIterator<Item = (StateId, f64)>,
    ) -> Result<()> {
        self.check_state(s)?;
        self.check_action(a)?;
        let mut row: Vec<(StateId, f64)> = row.into_iter().collect();
        for &(t, _) in &row {
            self.check_state(t)?;
        }
        row.sort_by_key(|&(t, _)| t);
        row.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        let idx = self.row_index(s, a);
        self.kernel[idx] = row;
        Ok(())
    }

    /// Sets `R(s, s')`.
    pub fn set_reward(&mut self, s: StateId, next: StateId, reward: f64) -> Result<()> {
        self.check_state(s)?;
        self.check_state(next)?;
        self.rewards[s.0 * self.num_states + next.0] = Some(reward);
        Ok(())
    }

    /// Sets `R(s, target)` for every `s`: the "reward for arriving in a
    /// state" encoding.
    pub fn set_arrival_reward(&mut self, target: StateId, reward: f64) -> Result<()> {
        for s in 0..self.num_states {
            self.set_reward(StateId(s), target, reward)?;
        }
        Ok(())
    }

    #[inline]
    pub fn row(&self, s: StateId, a: ActionId) -> &[(StateId, f64)] {
        &self.kernel[self.row_index(s, a)]
    }

    /// `P(next | s, a)`.
    pub fn prob(&self, s: StateId, a: ActionId, next: StateId) -> f64 {
        self.row(s, a)
            .iter()
            .find(|&&(t, _)| t == next)
            .map_or(0.0, |&(_, p)| p)
    }

    #[inline]
    pub fn arrival_reward(&self, s: StateId, next: StateId) -> Option<f64> {
        self.rewards[s.0 * self.num_states + next.0]
    }

    /// All explicitly defined rewards as `(s, s', r)`, in key order.
    pub fn rewards(&self) -> impl Iterator<Item = (StateId, StateId, f64)> + '_ {
        let n = self.num_states;
        self.rewards
            .iter()
            .enumerate()
            .filter_map(move |(i, r)| r.map(|r| (StateId(i / n), StateId(i % n), r)))
    }

    /// Successors of `s` reachable with positive probability under any action.
    pub fn successors(&self, s: StateId) -> Vec<StateId> {
        if self.is_terminal(s) {
            return Vec::new();
        }
        let mut out: Vec<StateId> = self
            .actions()
            .flat_map(|a| self.row(s, a).iter())
            .filter(|&&(_, p)| p > 0.0)
            .map(|&(t, _)| t)
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// The transition graph: every `(s, s')` with positive probability under
    /// some action, from non-terminal `s`.
    pub fn edges(&self) -> Vec<(StateId, StateId)> {
        self.non_terminal_states()
            .flat_map(|s| self.successors(s).into_iter().map(move |t| (s, t)))
            .collect()
    }

    /// Copy of this MDP with action `a` deleted; later actions shift down.
    pub fn without_action(&self, a: ActionId) -> Result<Mdp> {
        self.check_action(a)?;
        if self.num_actions == 1 {
            return Err(Error::InvalidParams("cannot remove the only action".into()));
        }
        let mut out = Mdp::new(
            self.name.clone(),
            self.num_states,
            self.num_actions - 1,
            self.start,
        )?;
        out.terminal = self.terminal.clone();
        out.rewards = self.rewards.clone();
        for s in self.states() {
            for b in self.actions().filter(|&b| b != a) {
                let nb = if b.0 > a.0 { ActionId(b.0 - 1) } else { b };
                let idx = out.row_index(s, nb);
                out.kernel[idx] = self.row(s, b).to_vec();
            }
        }
        Ok(out)
    }

    /// Lists every violated structural invariant. Empty iff the MDP is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for s in self.non_terminal_states() {
            for a in self.actions() {
                let row = self.row(s, a);
                let mut sum = 0.0;
                for &(t, p) in row {
                    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                        out.push(Violation::ProbabilityOutOfRange { s, a, next: t, p });
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    out.push(Violation::RowSum { s, a, sum });
                }
                for &(t, p) in row {
                    if p > 0.0 && self.arrival_reward(s, t).is_none() {
                        let v = Violation::MissingReward { s, next: t };
                        if !out.contains(&v) {
                            out.push(v);
                        }
                    }
                }
            }
        }
        for (s, t, r) in self.rewards() {
            if !r.is_finite() {
                out.push(Violation::NonFiniteReward { s, next: t });
            }
        }
        out
    }

    /// Draws `s'` from `P(. | s, a)` and returns it with `R(s, s')`.
    pub fn sample_transition(
        &self,
        s: StateId,
        a: ActionId,
        rng: &mut RngStream,
    ) -> Result<(StateId, f64)> {
        self.check_state(s)?;
        self.check_action(a)?;
        if self.is_terminal(s) {
            return Err(Error::TerminalState(s));
        }
        let row = self.row(s, a);
        let next = match row {
            [] => return Err(Error::EmptyRow(s, a)),
            [(t, _)] => *t,
            _ => {
                let u = rng.uniform();
                let mut acc = 0.0;
                let mut pick = None;
                for &(t, p) in row {
                    if p <= 0.0 {
                        continue;
                    }
                    acc += p;
                    pick = Some(t);
                    if u < acc {
                        break;
                    }
                }
                pick.ok_or(Error::EmptyRow(s, a))?
            }
        };
        let r = self
            .arrival_reward(s, next)
            .ok_or(Error::MissingReward(s, next))?;
        Ok((next, r))
    }

    #[inline]
    fn row_index(&self, s: StateId, a: ActionId) -> usize {
        s.0 * self.num_actions + a.0
    }

    fn check_state(&self, s: StateId) -> Result<()> {
        if s.0 < self.num_states {
            Ok(())
        } else {
            Err(Error::StateOutOfRange {
                state: s.label(),
                num_states: self.num_states,
            })
        }
    }

    fn check_action(&self, a: ActionId) -> Result<()> {
        if a.0 < self.num_actions {
            Ok(())
        } else {
            Err(Error::ActionOutOfRange {
                action: a.label(),
                num_actions: self.num_actions,
            })
        }
    }
}

/// One structural problem found by [`Mdp::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowSum {
        s: StateId,
        a: ActionId,
        sum: f64,
    },
    ProbabilityOutOfRange {
        s: StateId,
        a: ActionId,
        next: StateId,
        p: f64,
    },
    MissingReward {
        s: StateId,
        next: StateId,
    },
    NonFiniteReward {
        s: StateId,
        next: StateId,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowSum { s, a, sum } => write!(f, "row (s={s},a={a}) sums to {sum}"),
            Violation::ProbabilityOutOfRange { s, a, next, p } => {
                write!(
                    f,
                    "probability of {s} -> {next} under action {a} is {p}, outside [0, 1]"
                )
            }
            Violation::MissingReward { s, next } => {
                write!(f, "reward undefined on edge {s} -> {next}")
            }
            Violation::NonFiniteReward { s, next } => {
                write!(f, "reward on edge {s} -> {next} is not finite")
            }
        }
    }
}

/// One observed transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub s: StateId,
    pub a: ActionId,
    pub s_next: StateId,
    pub r: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<StepRecord>,
    /// Set when the episode hit `max_steps` before reaching a terminal.
    pub truncated: bool,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn final_state(&self) -> Option<StateId> {
        self.steps.last().map(|r| r.s_next)
    }
}

/// Action selection plus learning, driven by [`run_episode`].
pub trait Agent {
    fn select_action(&mut self, s: StateId, rng: &mut RngStream) -> Result<ActionId>;

    /// Called after every step. `terminal` is true when `rec.s_next` ends the
    /// episode.
    fn observe(&mut self, rec: &StepRecord, terminal: bool);

    /// Called once the episode ends, whether by terminal arrival or by
    /// truncation.
    fn end_episode(&mut self, _truncated: bool) {}
}

/// Runs one episode from `mdp.start()`.
pub fn run_episode<A: Agent + ?Sized>(
    mdp: &Mdp,
    agent: &mut A,
    rng: &mut RngStream,
    max_steps: usize,
) -> Result<EpisodeTrace> {
    if max_steps == 0 {
        return Err(Error::InvalidParams("max_steps must be at least 1".into()));
    }
    let mut trace = EpisodeTrace::default();
    let mut s = mdp.start();
    while !mdp.is_terminal(s) {
        if trace.steps.len() == max_steps {
            trace.truncated = true;
            break;
        }
        let a = agent.select_action(s, rng)?;
        let (next, r) = mdp.sample_transition(s, a, rng)?;
        let rec = StepRecord {
            s,
            a,
            s_next: next,
            r,
        };
        agent.observe(&rec, mdp.is_terminal(next));
        trace.steps.push(rec);
        s = next;
    }
    agent.end_episode(trace.truncated);
    Ok(trace)
}
