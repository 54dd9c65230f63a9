//! Value tables and the four one-step update rules: T-learning, on-policy
//! transition TD, Q-learning and TD(0).
//!
//! Every update touches exactly one table entry. Bootstraps through a
//! terminal successor are 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionId, StateId, StepRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSchedule {
    Constant,
    /// `alpha = 1 / (1 + visits)` per table entry, so the first update
    /// overwrites and later ones average.
    Harmonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub init_value: f64,
    pub alpha_schedule: AlphaSchedule,
    /// Let the T-learning bootstrap also consider the table default, which
    /// matters only when values can go negative.
    pub bootstrap_includes_default: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gamma: 0.85,
            init_value: 0.0,
            alpha_schedule: AlphaSchedule::Constant,
            bootstrap_includes_default: false,
        }
    }
}

impl LearnerConfig {
    pub fn harmonic(gamma: f64) -> Self {
        Self {
            alpha: 1.0,
            gamma,
            alpha_schedule: AlphaSchedule::Harmonic,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "alpha {} is outside (0, 1]",
                self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidParams(format!(
                "gamma {} is outside [0, 1)",
                self.gamma
            )));
        }
        if !self.init_value.is_finite() {
            return Err(Error::InvalidParams("init_value must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn step_size(&self, visits: u32) -> f64 {
        match self.alpha_schedule {
            AlphaSchedule::Constant => self.alpha,
            AlphaSchedule::Harmonic => 1.0 / (1.0 + f64::from(visits)),
        }
    }
}

/// Sparse `T(s, s')` table. Absent pairs read as `default_value`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionValueTable {
    num_states: usize,
    default_value: f64,
    values: Vec<Option<f64>>,
    visits: Vec<u32>,
    successors: Vec<Vec<StateId>>,
}

impl TransitionValueTable {
    pub fn new(num_states: usize, default_value: f64) -> Self {
        Self {
            num_states,
            default_value,
            values: vec![None; num_states * num_states],
            visits: vec![0; num_states * num_states],
            successors: vec![Vec::new(); num_states],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn default_value(&self) -> f64 {
        self.default_value
    }

    #[inline]
    fn idx(&self, s: StateId, t: StateId) -> usize {
        s.0 * self.num_states + t.0
    }

    #[inline]
    pub fn get(&self, s: StateId, t: StateId) -> f64 {
        self.values[self.idx(s, t)].unwrap_or(self.default_value)
    }

    /// The stored entry, if `(s, t)` has been observed or seeded.
    pub fn entry(&self, s: StateId, t: StateId) -> Option<f64> {
        self.values[self.idx(s, t)]
    }

    /// Successors with an entry keyed `(s, .)`, ascending.
    #[inline]
    pub fn observed_successors(&self, s: StateId) -> &[StateId] {
        &self.successors[s.0]
    }

    /// Sets an entry directly, as for warm-starting.
    pub fn seed(&mut self, s: StateId, t: StateId, value: f64) {
        let i = self.idx(s, t);
        if self.values[i].is_none() {
            let succ = &mut self.successors[s.0];
            let pos = succ.partition_point(|&x| x < t);
            succ.insert(pos, t);
        }
        self.values[i] = Some(value);
    }

    /// `max_t T(s, t)` over observed successors.
    pub fn max_observed(&self, s: StateId) -> Option<f64> {
        self.successors[s.0]
            .iter()
            .map(|&t| self.get(s, t))
            .reduce(f64::max)
    }

    /// The observed successor with the largest value; ties go to the lowest
    /// index.
    pub fn best_successor(&self, s: StateId) -> Option<StateId> {
        let mut best: Option<(StateId, f64)> = None;
        for &t in &self.successors[s.0] {
            let v = self.get(s, t);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((t, v));
            }
        }
        best.map(|(t, _)| t)
    }

    /// Stored entries as `(s, s', value)` in key order.
    pub fn entries(&self) -> impl Iterator<Item = (StateId, StateId, f64)> + '_ {
        self.successors
            .iter()
            .enumerate()
            .flat_map(move |(s, succ)| {
                succ.iter()
                    .map(move |&t| (StateId(s), t, self.get(StateId(s), t)))
            })
    }

    pub fn len(&self) -> usize {
        self.successors.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn update(&mut self, s: StateId, t: StateId, target: f64, cfg: &LearnerConfig) {
        let i = self.idx(s, t);
        let alpha = cfg.step_size(self.visits[i]);
        let old = self.get(s, t);
        self.seed(s, t, old + alpha * (target - old));
        self.visits[i] = self.visits[i].saturating_add(1);
    }

    /// Text dump: a `default` line, then `s s' value` lines in key order.
    pub fn dump(&self) -> String {
        let mut out = format!("# transition values, {} states\n", self.num_states);
        let _ = writeln!(out, "default {}", self.default_value);
        for (s, t, v) in self.entries() {
            let _ = writeln!(out, "{s} {t} {v}");
        }
        out
    }

    /// Inverse of [`TransitionValueTable::dump`].
    pub fn load_dump(text: &str, num_states: usize) -> Result<Self> {
        let mut table = Self::new(num_states, 0.0);
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let toks: Vec<&str> = body.split_whitespace().collect();
            match toks[..] {
                ["default", v] => {
                    table.default_value = v
                        .parse()
                        .map_err(|_| Error::parse(line, format!("bad default `{v}`")))?
                }
                [s, t, v] => {
                    let state = |tok: &str| {
                        tok.parse::<usize>()
                            .ok()
                            .and_then(StateId::from_label)
                            .filter(|s| s.0 < num_states)
                            .ok_or_else(|| Error::parse(line, format!("bad state `{tok}`")))
                    };
                    let v: f64 = v
                        .parse()
                        .map_err(|_| Error::parse(line, format!("bad value `{v}`")))?;
                    table.seed(state(s)?, state(t)?, v);
                }
                _ => {
                    return Err(Error::parse(
                        line,
                        "expected `s s' value` or `default value`",
                    ))
                }
            }
        }
        Ok(table)
    }
}

/// Dense `Q(s, a)` table.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
    visits: Vec<u32>,
}

impl QTable {
    pub fn new(num_states: usize, num_actions: usize, init_value: f64) -> Self {
        Self {
            num_states,
            num_actions,
            values: vec![init_value; num_states * num_actions],
            visits: vec![0; num_states * num_actions],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn get(&self, s: StateId, a: ActionId) -> f64 {
        self.values[s.0 * self.num_actions + a.0]
    }

    pub fn set(&mut self, s: StateId, a: ActionId, value: f64) {
        self.values[s.0 * self.num_actions + a.0] = value;
    }

    /// All action values of `s`.
    #[inline]
    pub fn row(&self, s: StateId) -> &[f64] {
        let start = s.0 * self.num_actions;
        &self.values[start..start + self.num_actions]
    }

    pub fn max_value(&self, s: StateId) -> f64 {
        self.row(s)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Actions attaining the maximum of `Q(s, .)` exactly.
    pub fn argmax_set(&self, s: StateId) -> Vec<ActionId> {
        let row = self.row(s);
        let best = self.max_value(s);
        (0..self.num_actions)
            .filter(|&a| row[a] == best)
            .map(ActionId)
            .collect()
    }

    pub fn dump(&self) -> String {
        let mut out = format!(
            "# action values, {} states x {} actions\n",
            self.num_states, self.num_actions
        );
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let _ = writeln!(
                    out,
                    "{} {} {}",
                    s + 1,
                    a + 1,
                    self.get(StateId(s), ActionId(a))
                );
            }
        }
        out
    }
}

/// Dense `V(s)` table; terminal entries stay 0.
#[derive(Debug, Clone, PartialEq)]
pub struct VTable {
    values: Vec<f64>,
    visits: Vec<u32>,
}

impl VTable {
    pub fn new(terminals: &[bool], init_value: f64) -> Self {
        Self {
            values: terminals
                .iter()
                .map(|&t| if t { 0.0 } else { init_value })
                .collect(),
            visits: vec![0; terminals.len()],
        }
    }

    #[inline]
    pub fn get(&self, s: StateId) -> f64 {
        self.values[s.0]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dump(&self) -> String {
        let mut out = format!("# state values, {} states\n", self.values.len());
        for (s, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{} {}", s + 1, v);
        }
        out
    }
}

/// T-learning: `T(s,s') += alpha [r + gamma max_s'' T(s',s'') - T(s,s')]`.
///
/// The max ranges over the observed successors of `s'` (the table default
/// when there are none).
pub fn t_learn_step(
    table: &mut TransitionValueTable,
    rec: &StepRecord,
    cfg: &LearnerConfig,
    terminals: &[bool],
) {
    let next = rec.s_next;
    let bootstrap = if terminals[next.0] {
        0.0
    } else {
        let d = table.default_value();
        match table.max_observed(next) {
            Some(m) if cfg.bootstrap_includes_default => m.max(d),
            Some(m) => m,
            None => d,
        }
    };
    table.update(rec.s, next, rec.r + cfg.gamma * bootstrap, cfg);
}

/// On-policy transition TD: bootstraps on the transition actually taken
/// next. `next = None` marks a terminal `rec.s_next`.
pub fn onpolicy_t_step(
    table: &mut TransitionValueTable,
    rec: &StepRecord,
    next: Option<&StepRecord>,
    cfg: &LearnerConfig,
) -> Result<()> {
    let bootstrap = match next {
        Some(n) if n.s != rec.s_next => {
            return Err(Error::Chaining {
                expected: rec.s_next,
                found: n.s,
            })
        }
        Some(n) => table.get(n.s, n.s_next),
        None => 0.0,
    };
    table.update(rec.s, rec.s_next, rec.r + cfg.gamma * bootstrap, cfg);
    Ok(())
}

/// One-step Q-learning.
pub fn q_learn_step(q: &mut QTable, rec: &StepRecord, cfg: &LearnerConfig, terminals: &[bool]) {
    let bootstrap = if terminals[rec.s_next.0] {
        0.0
    } else {
        q.max_value(rec.s_next)
    };
    let i = rec.s.0 * q.num_actions + rec.a.0;
    let alpha = cfg.step_size(q.visits[i]);
    q.values[i] += alpha * (rec.r + cfg.gamma * bootstrap - q.values[i]);
    q.visits[i] = q.visits[i].saturating_add(1);
}

/// TD(0): `V(s) += alpha [r + gamma V(s') - V(s)]`.
pub fn td0_step(v: &mut VTable, rec: &StepRecord, cfg: &LearnerConfig, terminals: &[bool]) {
    if terminals[rec.s.0] {
        return;
    }
    let bootstrap = if terminals[rec.s_next.0] {
        0.0
    } else {
        v.values[rec.s_next.0]
    };
    let i = rec.s.0;
    let alpha = cfg.step_size(v.visits[i]);
    v.values[i] += alpha * (rec.r + cfg.gamma * bootstrap - v.values[i]);
    v.visits[i] = v.visits[i].saturating_add(1);
}
