//! Action selection.
//!
//! [`t_policy_select`] is the count-based model policy over transition
//! values: tried actions are scored with their empirical successor
//! frequencies, untried ones with a distribution biased by `kappa` towards
//! the currently best-valued successor. [`q_epsilon_greedy`] and
//! [`v_model_policy`] are the baselines' policies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{QTable, TransitionValueTable, VTable};
use crate::mdp::{ActionId, StateId, StepRecord};
use crate::rng::RngStream;

/// Relative tolerance under which two action scores count as tied.
pub const TIE_TOL: f64 = 1e-12;

#[inline]
fn tied(x: f64, best: f64) -> bool {
    x >= best - TIE_TOL * best.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub epsilon: f64,
    pub kappa: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            kappa: 0.75,
        }
    }
}

impl PolicyConfig {
    pub fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidParams(format!(
                "epsilon {} is outside [0, 1]",
                self.epsilon
            )));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::InvalidParams(format!(
                "kappa {} is outside (0, 1)",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// Visit counts `C_sa` and `C_sas'`.
#[derive(Debug, Clone, PartialEq)]
pub struct Counters {
    num_states: usize,
    num_actions: usize,
    c_sa: Vec<u64>,
    c_sas: Vec<u64>,
    seen: Vec<Vec<StateId>>,
}

impl Counters {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            c_sa: vec![0; num_states * num_actions],
            c_sas: vec![0; num_states * num_actions * num_states],
            seen: vec![Vec::new(); num_states],
        }
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn c_sa(&self, s: StateId, a: ActionId) -> u64 {
        self.c_sa[s.0 * self.num_actions + a.0]
    }

    #[inline]
    pub fn c_sas(&self, s: StateId, a: ActionId, t: StateId) -> u64 {
        self.c_sas[(s.0 * self.num_actions + a.0) * self.num_states + t.0]
    }

    /// Successors observed from `s` under any action, ascending.
    #[inline]
    pub fn seen_successors(&self, s: StateId) -> &[StateId] {
        &self.seen[s.0]
    }

    pub fn visits(&self, s: StateId) -> u64 {
        let start = s.0 * self.num_actions;
        self.c_sa[start..start + self.num_actions].iter().sum()
    }

    pub fn observe(&mut self, rec: &StepRecord) {
        let sa = rec.s.0 * self.num_actions + rec.a.0;
        self.c_sa[sa] += 1;
        self.c_sas[sa * self.num_states + rec.s_next.0] += 1;
        let seen = &mut self.seen[rec.s.0];
        if let Err(pos) = seen.binary_search(&rec.s_next) {
            seen.insert(pos, rec.s_next);
        }
    }

    /// Empirical `p(t | s, a) = C_sas' / C_sa`, or `None` for untried pairs.
    pub fn empirical(&self, s: StateId, a: ActionId, t: StateId) -> Option<f64> {
        let n = self.c_sa(s, a);
        (n > 0).then(|| self.c_sas(s, a, t) as f64 / n as f64)
    }

    /// Checks `C_sa = sum_s' C_sas'` and the seen-successor sets.
    pub fn is_consistent(&self) -> bool {
        for s in 0..self.num_states {
            let mut seen = Vec::new();
            for a in 0..self.num_actions {
                let sa = s * self.num_actions + a;
                let row = &self.c_sas[sa * self.num_states..(sa + 1) * self.num_states];
                if row.iter().sum::<u64>() != self.c_sa[sa] {
                    return false;
                }
                seen.extend(
                    row.iter()
                        .enumerate()
                        .filter(|(_, &c)| c > 0)
                        .map(|(t, _)| StateId(t)),
                );
            }
            seen.sort();
            seen.dedup();
            if seen != self.seen[s] {
                return false;
            }
        }
        true
    }
}

/// Running-mean reward model `R^a_ss'`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    num_states: usize,
    num_actions: usize,
    mean: Vec<f64>,
    count: Vec<u64>,
}

impl RewardModel {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        let len = num_states * num_actions * num_states;
        Self {
            num_states,
            num_actions,
            mean: vec![0.0; len],
            count: vec![0; len],
        }
    }

    #[inline]
    fn idx(&self, s: StateId, a: ActionId, t: StateId) -> usize {
        (s.0 * self.num_actions + a.0) * self.num_states + t.0
    }

    /// Mean reward seen on `(s, a, t)`, `None` if never observed.
    pub fn r_hat(&self, s: StateId, a: ActionId, t: StateId) -> Option<f64> {
        let i = self.idx(s, a, t);
        (self.count[i] > 0).then(|| self.mean[i])
    }

    pub fn observe(&mut self, rec: &StepRecord) {
        let i = self.idx(rec.s, rec.a, rec.s_next);
        self.count[i] += 1;
        self.mean[i] += (rec.r - self.mean[i]) / self.count[i] as f64;
    }
}

/// Records one transition in both the counters and the reward model.
pub fn observe(counters: &mut Counters, model: &mut RewardModel, rec: &StepRecord) {
    counters.observe(rec);
    model.observe(rec);
}

/// Distribution for an untried action: `kappa` on the best-valued seen
/// successor (lowest index on ties), `1 - kappa` spread evenly over the
/// rest; all mass on the best one when it is the only seen successor.
fn biased_distribution(
    seen: &[StateId],
    value: impl Fn(StateId) -> f64,
    kappa: f64,
) -> Option<Vec<(StateId, f64)>> {
    let mut best: Option<(StateId, f64)> = None;
    for &t in seen {
        let v = value(t);
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((t, v));
        }
    }
    let (star, _) = best?;
    if seen.len() == 1 {
        return Some(vec![(star, 1.0)]);
    }
    let rest = (1.0 - kappa) / (seen.len() - 1) as f64;
    Some(
        seen.iter()
            .map(|&t| (t, if t == star { kappa } else { rest }))
            .collect(),
    )
}

/// The estimated successor distribution of `(s, a)`. `None` when there is
/// no data: `a` untried and no successor of `s` seen.
pub fn estimate_action_distribution(
    counters: &Counters,
    table: &TransitionValueTable,
    s: StateId,
    a: ActionId,
    kappa: f64,
) -> Option<Vec<(StateId, f64)>> {
    let n = counters.c_sa(s, a);
    if n > 0 {
        Some(
            counters
                .seen_successors(s)
                .iter()
                .filter_map(|&t| {
                    let c = counters.c_sas(s, a, t);
                    (c > 0).then(|| (t, c as f64 / n as f64))
                })
                .collect(),
        )
    } else {
        biased_distribution(counters.seen_successors(s), |t| table.get(s, t), kappa)
    }
}

/// `score(a) = sum_s' p(s'|s,a) T(s,s')` for every action, or `None` when
/// `s` has never been left.
pub fn t_action_scores(
    s: StateId,
    table: &TransitionValueTable,
    counters: &Counters,
    kappa: f64,
) -> Option<Vec<f64>> {
    let seen = counters.seen_successors(s);
    if seen.is_empty() {
        return None;
    }
    let untried = biased_distribution(seen, |t| table.get(s, t), kappa)
        .map_or(0.0, |d| d.iter().map(|&(t, p)| p * table.get(s, t)).sum());
    Some(
        (0..counters.num_actions())
            .map(ActionId)
            .map(|a| {
                let n = counters.c_sa(s, a);
                if n == 0 {
                    untried
                } else {
                    let n = n as f64;
                    seen.iter()
                        .map(|&t| counters.c_sas(s, a, t) as f64 / n * table.get(s, t))
                        .sum()
                }
            })
            .collect(),
    )
}

/// Indices within the tie tolerance of the maximum.
pub fn argmax_set(scores: &[f64]) -> Vec<ActionId> {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scores
        .iter()
        .enumerate()
        .filter(|(_, &x)| tied(x, best))
        .map(|(a, _)| ActionId(a))
        .collect()
}

/// Uniform draw among the tied maxima without allocating.
fn sample_argmax(scores: &[f64], rng: &mut RngStream) -> ActionId {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties = scores.iter().filter(|&&x| tied(x, best)).count();
    let k = rng.below(ties);
    let a = scores
        .iter()
        .enumerate()
        .filter(|(_, &x)| tied(x, best))
        .nth(k)
        .map(|(a, _)| a)
        .unwrap_or(0);
    ActionId(a)
}

/// Greedy action set of the transition-value policy (no exploration). All
/// actions when `s` has no data.
pub fn t_greedy_set(
    s: StateId,
    table: &TransitionValueTable,
    counters: &Counters,
    kappa: f64,
) -> Vec<ActionId> {
    match t_action_scores(s, table, counters, kappa) {
        Some(scores) => argmax_set(&scores),
        None => (0..counters.num_actions()).map(ActionId).collect(),
    }
}

/// Transition-value action selection with epsilon exploration.
pub fn t_policy_select(
    s: StateId,
    table: &TransitionValueTable,
    counters: &Counters,
    cfg: &PolicyConfig,
    rng: &mut RngStream,
    num_actions: usize,
) -> ActionId {
    if rng.uniform() < cfg.epsilon {
        return ActionId(rng.below(num_actions));
    }
    match t_action_scores(s, table, counters, cfg.kappa) {
        Some(scores) => sample_argmax(&scores, rng),
        None => ActionId(rng.below(num_actions)),
    }
}

/// Epsilon-greedy over `Q(s, .)`, ties uniform.
pub fn q_epsilon_greedy(s: StateId, q: &QTable, epsilon: f64, rng: &mut RngStream) -> ActionId {
    if rng.uniform() < epsilon {
        return ActionId(rng.below(q.num_actions()));
    }
    sample_argmax(q.row(s), rng)
}

/// Greedy action set of `Q(s, .)` under the tie tolerance.
pub fn q_greedy_set(s: StateId, q: &QTable) -> Vec<ActionId> {
    argmax_set(q.row(s))
}

/// One-step lookahead scores `sum_s' p(s'|s,a) (r(s,a,s') + gamma V(s'))`.
/// Untried actions use the kappa-biased distribution with rewards of 0.
pub fn v_action_scores(
    s: StateId,
    v: &VTable,
    counters: &Counters,
    model: &RewardModel,
    gamma: f64,
    kappa: f64,
) -> Option<Vec<f64>> {
    let seen = counters.seen_successors(s);
    if seen.is_empty() {
        return None;
    }
    let untried = biased_distribution(seen, |t| gamma * v.get(t), kappa)
        .map_or(0.0, |d| d.iter().map(|&(t, p)| p * gamma * v.get(t)).sum());
    Some(
        (0..counters.num_actions())
            .map(ActionId)
            .map(|a| {
                let n = counters.c_sa(s, a);
                if n == 0 {
                    untried
                } else {
                    let n = n as f64;
                    seen.iter()
                        .map(|&t| {
                            let c = counters.c_sas(s, a, t);
                            if c == 0 {
                                return 0.0;
                            }
                            let r = model.r_hat(s, a, t).unwrap_or(0.0);
                            c as f64 / n * (r + gamma * v.get(t))
                        })
                        .sum()
                }
            })
            .collect(),
    )
}

pub fn v_greedy_set(
    s: StateId,
    v: &VTable,
    counters: &Counters,
    model: &RewardModel,
    gamma: f64,
    kappa: f64,
) -> Vec<ActionId> {
    match v_action_scores(s, v, counters, model, gamma, kappa) {
        Some(scores) => argmax_set(&scores),
        None => (0..counters.num_actions()).map(ActionId).collect(),
    }
}

/// Model-based greedy policy over state values, with epsilon exploration.
pub fn v_model_policy(
    s: StateId,
    v: &VTable,
    counters: &Counters,
    model: &RewardModel,
    gamma: f64,
    cfg: &PolicyConfig,
    rng: &mut RngStream,
) -> ActionId {
    let num_actions = counters.num_actions();
    if rng.uniform() < cfg.epsilon {
        return ActionId(rng.below(num_actions));
    }
    match v_action_scores(s, v, counters, model, gamma, cfg.kappa) {
        Some(scores) => sample_argmax(&scores, rng),
        None => ActionId(rng.below(num_actions)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn st(label: usize) -> StateId {
        StateId(label - 1)
    }

    fn rec(s: usize, a: usize, t: usize, r: f64) -> StepRecord {
        StepRecord {
            s: st(s),
            a: ActionId(a),
            s_next: st(t),
            r,
        }
    }

    fn close(d: &[(StateId, f64)], want: &[(usize, f64)]) -> bool {
        d.len() == want.len()
            && want
                .iter()
                .all(|&(l, p)| d.iter().any(|&(t, q)| t == st(l) && (q - p).abs() < 1e-12))
    }

    #[test]
    fn observe_increments_both_counters() {
        let mut c = Counters::new(6, 11);
        let mut m = RewardModel::new(6, 11);
        observe(&mut c, &mut m, &rec(1, 2, 2, 0.0));
        assert_eq!(c.c_sa(st(1), ActionId(2)), 1);
        assert_eq!(c.c_sas(st(1), ActionId(2), st(2)), 1);
        assert_eq!(m.r_hat(st(1), ActionId(2), st(2)), Some(0.0));
        assert_eq!(m.r_hat(st(1), ActionId(2), st(3)), None);
    }

    #[test]
    fn empirical_ratio() {
        let mut c = Counters::new(6, 11);
        for t in [5, 5, 6] {
            c.observe(&rec(3, 0, t, 0.0));
        }
        assert!((c.empirical(st(3), ActionId(0), st(5)).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.empirical(st(3), ActionId(1), st(5)), None);
    }

    #[test]
    fn untried_action_biased_towards_best_successor() {
        let mut c = Counters::new(6, 11);
        c.observe(&rec(1, 0, 2, 0.0));
        c.observe(&rec(1, 5, 3, 0.0));
        let mut t = TransitionValueTable::new(6, 0.0);
        t.seed(st(1), st(2), 0.3);
        t.seed(st(1), st(3), 0.9);
        let d = estimate_action_distribution(&c, &t, st(1), ActionId(7), 0.75).unwrap();
        assert!(close(&d, &[(3, 0.75), (2, 0.25)]));

        c.observe(&rec(1, 1, 6, 0.0));
        let d = estimate_action_distribution(&c, &t, st(1), ActionId(7), 0.75).unwrap();
        assert!(close(&d, &[(3, 0.75), (2, 0.125), (6, 0.125)]));
        assert!((d.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tried_action_uses_counts() {
        let mut c = Counters::new(6, 11);
        for i in 0..10 {
            c.observe(&rec(3, 4, if i < 7 { 5 } else { 6 }, 0.0));
        }
        let t = TransitionValueTable::new(6, 0.0);
        let d = estimate_action_distribution(&c, &t, st(3), ActionId(4), 0.75).unwrap();
        assert!(close(&d, &[(5, 0.7), (6, 0.3)]));
    }

    #[test]
    fn no_data_is_signalled() {
        let c = Counters::new(6, 11);
        let t = TransitionValueTable::new(6, 0.0);
        assert!(estimate_action_distribution(&c, &t, st(1), ActionId(0), 0.75).is_none());
        assert_eq!(t_greedy_set(st(1), &t, &c, 0.75).len(), 11);
    }

    #[test]
    fn reliable_action_beats_coin_flips() {
        // n = 5: a* is action index 10.
        let mut c = Counters::new(6, 11);
        for _ in 0..10 {
            c.observe(&rec(3, 10, 5, 2.0));
        }
        for a in 0..10 {
            c.observe(&rec(3, a, 5, 2.0));
            c.observe(&rec(3, a, 6, 0.0));
        }
        let mut t = TransitionValueTable::new(6, 0.0);
        t.seed(st(3), st(5), 1.0);
        t.seed(st(3), st(6), 0.0);
        assert_eq!(t_greedy_set(st(3), &t, &c, 0.75), vec![ActionId(10)]);
        let cfg = PolicyConfig {
            epsilon: 0.0,
            kappa: 0.75,
        };
        let mut rng = RngStream::new(3);
        for _ in 0..20 {
            assert_eq!(
                t_policy_select(st(3), &t, &c, &cfg, &mut rng, 11),
                ActionId(10)
            );
        }
    }

    #[test]
    fn untried_actions_preferred_over_failures() {
        let mut c = Counters::new(6, 11);
        c.observe(&rec(3, 0, 6, 0.0));
        c.observe(&rec(3, 10, 5, 2.0));
        c.observe(&rec(3, 10, 6, 0.0));
        let mut t = TransitionValueTable::new(6, 0.0);
        t.seed(st(3), st(5), 1.0);
        t.seed(st(3), st(6), 0.0);
        let scores = t_action_scores(st(3), &t, &c, 0.75).unwrap();
        assert_eq!(scores[0], 0.0);
        assert!((scores[1] - 0.75).abs() < 1e-15);
        let set = t_greedy_set(st(3), &t, &c, 0.75);
        assert_eq!(set, (1..10).map(ActionId).collect::<Vec<_>>());
    }

    #[test]
    fn never_visited_state_is_uniform() {
        let c = Counters::new(6, 11);
        let t = TransitionValueTable::new(6, 0.0);
        let cfg = PolicyConfig {
            epsilon: 0.0,
            kappa: 0.75,
        };
        let mut rng = RngStream::new(11);
        let mut hits = [0usize; 11];
        for _ in 0..11_000 {
            hits[t_policy_select(st(1), &t, &c, &cfg, &mut rng, 11).0] += 1;
        }
        // 3 sigma of a binomial(11000, 1/11)
        let sd = (11_000.0f64 * (1.0 / 11.0) * (10.0 / 11.0)).sqrt();
        assert!(
            hits.iter().all(|&h| (h as f64 - 1000.0).abs() < 3.0 * sd),
            "{hits:?}"
        );
    }

    #[test]
    fn q_epsilon_greedy_cases() {
        let mut q = QTable::new(6, 11, 0.0);
        q.set(st(3), ActionId(10), 1.0);
        let mut rng = RngStream::new(5);
        for _ in 0..100 {
            assert_eq!(q_epsilon_greedy(st(3), &q, 0.0, &mut rng), ActionId(10));
        }
        let n = 10_000;
        let mut hits = [0usize; 11];
        for _ in 0..n {
            hits[q_epsilon_greedy(st(3), &q, 1.0, &mut rng).0] += 1;
        }
        let p = 1.0 / 11.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(
            hits.iter()
                .all(|&h| (h as f64 - n as f64 * p).abs() < 3.0 * sd),
            "{hits:?}"
        );
        let mut hits = [0usize; 11];
        for _ in 0..n {
            hits[q_epsilon_greedy(st(1), &q, 0.0, &mut rng).0] += 1;
        }
        assert!(
            hits.iter()
                .all(|&h| (h as f64 - n as f64 * p).abs() < 3.0 * sd),
            "{hits:?}"
        );
    }

    #[test]
    fn v_policy_direct_substitution() {
        let terms = [false, false, false, true, true, true];
        let v = VTable::new(&terms, 0.0);
        let mut c = Counters::new(6, 11);
        let mut m = RewardModel::new(6, 11);
        observe(&mut c, &mut m, &rec(3, 10, 5, 2.0));
        observe(&mut c, &mut m, &rec(3, 0, 6, 0.0));
        let scores = v_action_scores(st(3), &v, &c, &m, 0.85, 0.75).unwrap();
        assert_eq!(scores[10], 2.0);
        assert_eq!(
            v_greedy_set(st(3), &v, &c, &m, 0.85, 0.75),
            vec![ActionId(10)]
        );

        let c = Counters::new(6, 11);
        let m = RewardModel::new(6, 11);
        assert_eq!(v_greedy_set(st(3), &v, &c, &m, 0.85, 0.75).len(), 11);
    }

    #[test]
    fn policy_config_ranges() {
        assert!(PolicyConfig::default().check().is_ok());
        assert!(PolicyConfig {
            epsilon: 1.5,
            kappa: 0.5
        }
        .check()
        .is_err());
        assert!(PolicyConfig {
            epsilon: 0.1,
            kappa: 1.0
        }
        .check()
        .is_err());
    }

    fn arb_record() -> impl Strategy<Value = StepRecord> {
        (0usize..4, 0usize..5, 0usize..4, 0.0f64..2.0).prop_map(|(s, a, t, r)| StepRecord {
            s: StateId(s),
            a: ActionId(a),
            s_next: StateId(t),
            r,
        })
    }

    proptest! {
        #[test]
        fn counters_stay_consistent_and_distributions_normalised(
            recs in proptest::collection::vec(arb_record(), 0..100),
            values in proptest::collection::vec(-3.0f64..3.0, 16),
            kappa in 0.01f64..0.99,
            scale in 0.1f64..10.0,
        ) {
            let mut c = Counters::new(4, 5);
            let mut m = RewardModel::new(4, 5);
            for r in &recs {
                observe(&mut c, &mut m, r);
            }
            prop_assert!(c.is_consistent());

            let mut t = TransitionValueTable::new(4, 0.0);
            let mut scaled = TransitionValueTable::new(4, 0.0);
            for s in 0..4 {
                for u in 0..4 {
                    t.seed(StateId(s), StateId(u), values[s * 4 + u]);
                    scaled.seed(StateId(s), StateId(u), scale * values[s * 4 + u]);
                }
            }
            for s in 0..4 {
                for a in 0..5 {
                    if let Some(d) = estimate_action_distribution(&c, &t, StateId(s), ActionId(a), kappa) {
                        let total: f64 = d.iter().map(|x| x.1).sum();
                        prop_assert!((total - 1.0).abs() < 1e-12);
                        prop_assert!(d.iter().all(|(u, _)| c.seen_successors(StateId(s)).contains(u)));
                    }
                }
                prop_assert_eq!(
                    t_greedy_set(StateId(s), &t, &c, kappa),
                    t_greedy_set(StateId(s), &scaled, &c, kappa)
                );
            }
        }
    }
}
