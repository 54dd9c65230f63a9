//! Exact dynamic-programming ground truth.
//!
//! * [`value_iteration`] gives `V*`, `Q*` and the optimal action sets.
//! * [`t_sharp`] gives the fixed point of the T-learning backup over the
//!   any-action transition graph:
//!   `T(s,s') = R(s,s') + gamma * max_{s'' in succ(s')} T(s',s'')`.
//! * [`precision_check`] compares the actions that are greedy with respect to
//!   `T#` under the true kernel against the `Q*`-optimal actions.
//! * [`tau_map`] and [`env_class_check`] describe the preferred path through
//!   the transition graph and how reliably it can be followed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{QTable, TransitionValueTable};
use crate::mdp::{ActionId, Mdp, StateId};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_SWEEPS: usize = 100_000;

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "gamma {gamma} is outside [0, 1)"
        )))
    }
}

fn reward(mdp: &Mdp, s: StateId, t: StateId) -> f64 {
    mdp.arrival_reward(s, t).unwrap_or(0.0)
}

/// Actions whose value is within `tol` of the best.
fn near_argmax(values: impl Iterator<Item = f64> + Clone, tol: f64) -> Vec<ActionId> {
    let best = values.clone().fold(f64::NEG_INFINITY, f64::max);
    values
        .enumerate()
        .filter(|&(_, v)| v >= best - tol)
        .map(|(a, _)| ActionId(a))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueSolution {
    pub v_star: Vec<f64>,
    pub q_star: QTable,
    /// Empty for terminal states.
    pub optimal_actions: Vec<Vec<ActionId>>,
    pub sweeps: usize,
}

/// Synchronous value iteration to a sup-norm Bellman residual below `tol`.
pub fn value_iteration(mdp: &Mdp, gamma: f64, tol: f64) -> Result<ValueSolution> {
    check_gamma(gamma)?;
    let ns = mdp.num_states();
    let mut v = vec![0.0; ns];
    let mut q = QTable::new(ns, mdp.num_actions(), 0.0);
    for sweep in 1..=MAX_SWEEPS {
        let mut next = vec![0.0; ns];
        for s in mdp.non_terminal_states() {
            let mut best = f64::NEG_INFINITY;
            for a in mdp.actions() {
                let qa: f64 = mdp
                    .row(s, a)
                    .iter()
                    .map(|&(t, p)| p * (reward(mdp, s, t) + gamma * v[t.0]))
                    .sum();
                q.set(s, a, qa);
                best = best.max(qa);
            }
            next[s.0] = best;
        }
        let residual = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if residual < tol {
            // One more greedy backup so Q is consistent with the final V.
            for s in mdp.non_terminal_states() {
                for a in mdp.actions() {
                    let qa: f64 = mdp
                        .row(s, a)
                        .iter()
                        .map(|&(t, p)| p * (reward(mdp, s, t) + gamma * v[t.0]))
                        .sum();
                    q.set(s, a, qa);
                }
            }
            let optimal_actions = mdp
                .states()
                .map(|s| {
                    if mdp.is_terminal(s) {
                        Vec::new()
                    } else {
                        near_argmax(q.row(s).iter().copied(), tol)
                    }
                })
                .collect();
            return Ok(ValueSolution {
                v_star: v,
                q_star: q,
                optimal_actions,
                sweeps: sweep,
            });
        }
    }
    Err(Error::Divergence(MAX_SWEEPS))
}

/// Fixed point of the T-learning backup on the transition graph. Entries
/// exist exactly on the graph's edges.
pub fn t_sharp(mdp: &Mdp, gamma: f64, tol: f64) -> Result<TransitionValueTable> {
    check_gamma(gamma)?;
    let succ: Vec<Vec<StateId>> = mdp.states().map(|s| mdp.successors(s)).collect();
    let edges = mdp.edges();
    let mut table = TransitionValueTable::new(mdp.num_states(), 0.0);
    for &(s, t) in &edges {
        table.seed(s, t, 0.0);
    }
    let best_out = |table: &TransitionValueTable, t: StateId| -> f64 {
        if mdp.is_terminal(t) {
            return 0.0;
        }
        succ[t.0]
            .iter()
            .map(|&u| table.get(t, u))
            .reduce(f64::max)
            .unwrap_or(0.0)
    };
    for _ in 0..MAX_SWEEPS {
        let mut next = table.clone();
        let mut residual: f64 = 0.0;
        for &(s, t) in &edges {
            let v = reward(mdp, s, t) + gamma * best_out(&table, t);
            residual = residual.max((v - table.get(s, t)).abs());
            next.seed(s, t, v);
        }
        table = next;
        if residual < tol {
            return Ok(table);
        }
    }
    Err(Error::Divergence(MAX_SWEEPS))
}

/// `sum_s' P(s'|s,a) T(s,s')` under the true kernel.
pub fn expected_transition_value(
    mdp: &Mdp,
    table: &TransitionValueTable,
    s: StateId,
    a: ActionId,
) -> f64 {
    mdp.row(s, a)
        .iter()
        .map(|&(t, p)| p * table.get(s, t))
        .sum()
}

/// Per-state argmax sets of `a -> sum_s' P(s'|s,a) T(s,s')`.
pub fn t_greedy_actions(mdp: &Mdp, table: &TransitionValueTable, tol: f64) -> Vec<Vec<ActionId>> {
    mdp.states()
        .map(|s| {
            if mdp.is_terminal(s) {
                Vec::new()
            } else {
                let scores: Vec<f64> = mdp
                    .actions()
                    .map(|a| expected_transition_value(mdp, table, s, a))
                    .collect();
                near_argmax(scores.into_iter(), tol)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRow {
    pub state: StateId,
    pub t_greedy: Vec<ActionId>,
    pub q_optimal: Vec<ActionId>,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub holds: bool,
    pub per_state: Vec<PrecisionRow>,
}

impl PrecisionReport {
    pub fn mismatches(&self) -> impl Iterator<Item = &PrecisionRow> {
        self.per_state.iter().filter(|r| !r.agrees)
    }
}

/// Whether `T#`-greedy action selection under the true kernel picks exactly
/// the `Q*`-optimal actions at every non-terminal state.
pub fn precision_check(mdp: &Mdp, gamma: f64, tol: f64) -> Result<PrecisionReport> {
    let vi = value_iteration(mdp, gamma, tol)?;
    let ts = t_sharp(mdp, gamma, tol)?;
    let greedy = t_greedy_actions(mdp, &ts, tol);
    let per_state: Vec<PrecisionRow> = mdp
        .non_terminal_states()
        .map(|s| PrecisionRow {
            state: s,
            agrees: greedy[s.0] == vi.optimal_actions[s.0],
            t_greedy: greedy[s.0].clone(),
            q_optimal: vi.optimal_actions[s.0].clone(),
        })
        .collect();
    Ok(PrecisionReport {
        holds: per_state.iter().all(|r| r.agrees),
        per_state,
    })
}

/// Optimal state values when every graph edge can be taken deterministically.
pub fn relaxed_values(mdp: &Mdp, gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    let succ: Vec<Vec<StateId>> = mdp.states().map(|s| mdp.successors(s)).collect();
    let mut w = vec![0.0; mdp.num_states()];
    for _ in 0..MAX_SWEEPS {
        let mut residual: f64 = 0.0;
        let mut next = vec![0.0; w.len()];
        for s in mdp.non_terminal_states() {
            next[s.0] = succ[s.0]
                .iter()
                .map(|&t| reward(mdp, s, t) + gamma * w[t.0])
                .reduce(f64::max)
                .unwrap_or(0.0);
            residual = residual.max((next[s.0] - w[s.0]).abs());
        }
        w = next;
        if residual < 1e-13 {
            return Ok(w);
        }
    }
    Err(Error::Divergence(MAX_SWEEPS))
}

/// Preferred successor of every non-terminal state: the neighbour with the
/// highest arrival reward plus discounted relaxed value. Ties go to the
/// lowest index. `None` for terminals and dead ends.
pub fn tau_map(mdp: &Mdp, gamma: f64) -> Result<Vec<Option<StateId>>> {
    let w = relaxed_values(mdp, gamma)?;
    Ok(mdp
        .states()
        .map(|s| {
            if mdp.is_terminal(s) {
                return None;
            }
            let mut best: Option<(StateId, f64)> = None;
            for t in mdp.successors(s) {
                let v = reward(mdp, s, t) + gamma * w[t.0];
                if best.is_none_or(|(_, bv)| v > bv + 1e-12) {
                    best = Some((t, v));
                }
            }
            best.map(|(t, _)| t)
        })
        .collect())
}

/// Follows `tau` from `from` until a terminal (or a repeat).
pub fn tau_path(tau: &[Option<StateId>], from: StateId) -> Vec<StateId> {
    let mut path = vec![from];
    let mut s = from;
    while let Some(t) = tau[s.0] {
        if path.contains(&t) {
            break;
        }
        path.push(t);
        s = t;
    }
    path
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvClassEdge {
    pub state: StateId,
    pub tau: StateId,
    /// Mean over actions of `P(tau(s) | s, a)`.
    pub mean_prob: f64,
    pub best_prob: f64,
    pub best_action: ActionId,
    pub likely_observed: bool,
    pub reliably_achievable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvClassReport {
    pub epsilon_env: f64,
    pub edges: Vec<EnvClassEdge>,
    pub holds: bool,
}

/// Checks, on every `(s, tau(s))` edge, that the preferred transition is
/// likely under an average action (`mean > eps`) and achievable by some
/// action with probability above `1 - eps`.
pub fn env_class_check(mdp: &Mdp, gamma: f64, epsilon_env: f64) -> Result<EnvClassReport> {
    if !(epsilon_env > 0.0 && epsilon_env < 0.5) {
        return Err(Error::InvalidParams(format!(
            "epsilon_env {epsilon_env} is outside (0, 0.5)"
        )));
    }
    let tau = tau_map(mdp, gamma)?;
    let mut edges = Vec::new();
    for s in mdp.non_terminal_states() {
        let Some(t) = tau[s.0] else { continue };
        let probs: Vec<f64> = mdp.actions().map(|a| mdp.prob(s, a, t)).collect();
        let mean_prob = probs.iter().sum::<f64>() / probs.len() as f64;
        let (best_action, best_prob) =
            probs
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (a, &p)| if p > acc.1 { (a, p) } else { acc },
                );
        edges.push(EnvClassEdge {
            state: s,
            tau: t,
            mean_prob,
            best_prob,
            best_action: ActionId(best_action),
            likely_observed: mean_prob > epsilon_env,
            reliably_achievable: best_prob > 1.0 - epsilon_env,
        });
    }
    Ok(EnvClassReport {
        epsilon_env,
        holds: edges
            .iter()
            .all(|e| e.likely_observed && e.reliably_achievable),
        edges,
    })
}

/// Everything the convergence detectors and reports need about one MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub gamma: f64,
    pub tol: f64,
    pub v_star: Vec<f64>,
    pub q_star: QTable,
    pub t_sharp: TransitionValueTable,
    pub optimal_actions: Vec<Vec<ActionId>>,
    pub tau: Vec<Option<StateId>>,
    pub t_greedy_actions: Vec<Vec<ActionId>>,
}

impl OracleSolution {
    pub fn solve(mdp: &Mdp, gamma: f64, tol: f64) -> Result<Self> {
        let vi = value_iteration(mdp, gamma, tol)?;
        let ts = t_sharp(mdp, gamma, tol)?;
        let t_greedy_actions = t_greedy_actions(mdp, &ts, tol);
        Ok(Self {
            gamma,
            tol,
            v_star: vi.v_star,
            q_star: vi.q_star,
            optimal_actions: vi.optimal_actions,
            tau: tau_map(mdp, gamma)?,
            t_sharp: ts,
            t_greedy_actions,
        })
    }

    /// Non-terminal states reachable from the start when only optimal
    /// actions are taken, ascending.
    pub fn optimal_path_states(&self, mdp: &Mdp) -> Vec<StateId> {
        let mut seen = vec![false; mdp.num_states()];
        let mut stack = vec![mdp.start()];
        let mut out = Vec::new();
        while let Some(s) = stack.pop() {
            if seen[s.0] || mdp.is_terminal(s) {
                continue;
            }
            seen[s.0] = true;
            out.push(s);
            for &a in &self.optimal_actions[s.0] {
                for &(t, p) in mdp.row(s, a) {
                    if p > 0.0 && !seen[t.0] {
                        stack.push(t);
                    }
                }
            }
        }
        out.sort();
        out
    }

    /// Non-terminal states on the tau path from the start.
    pub fn tau_path_states(&self, mdp: &Mdp) -> Vec<StateId> {
        tau_path(&self.tau, mdp.start())
            .into_iter()
            .filter(|&s| !mdp.is_terminal(s))
            .collect()
    }
}
