mod common;

use common::{act, st, stratified_episodes, stratified_sweep, uniform_policy_values};
use proptest::prelude::*;
use tlearn::environments::{
    build_balance_beam, build_small_skill_mdp, skill_action, SkillEnvParams,
};
use tlearn::experiments::{detect_policy_convergence, LearnerView};
use tlearn::learners::{onpolicy_t_step, td0_step, LearnerConfig, TransitionValueTable, VTable};
use tlearn::mdp::{run_episode, Agent, Mdp, StateId, StepRecord};
use tlearn::oracle::{
    precision_check, t_sharp, tau_map, tau_path, value_iteration, OracleSolution, DEFAULT_TOL,
};
use tlearn::policy::{t_greedy_set, Counters};
use tlearn::{ActionId, Result, RngStream};

const GAMMA: f64 = 0.85;

fn small(n: usize) -> Mdp {
    build_small_skill_mdp(&SkillEnvParams::small(n)).unwrap()
}

#[test]
fn t_sharp_satisfies_its_relation_identity() {
    for mdp in [
        small(5),
        build_balance_beam(&SkillEnvParams::beam(7)).unwrap(),
    ] {
        let ts = t_sharp(&mdp, GAMMA, DEFAULT_TOL).unwrap();
        for (s, t, v) in ts.entries() {
            let tail = if mdp.is_terminal(t) {
                0.0
            } else {
                mdp.successors(t)
                    .iter()
                    .map(|&u| ts.get(t, u))
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            let rhs = mdp.arrival_reward(s, t).unwrap() + GAMMA * tail;
            assert!((v - rhs).abs() < 1e-9, "{s}->{t}: {v} vs {rhs}");
        }
    }
}

#[test]
fn beam_values_follow_geometric_discounting() {
    let beam = build_balance_beam(&SkillEnvParams::beam(50)).unwrap();
    let ts = t_sharp(&beam, GAMMA, DEFAULT_TOL).unwrap();
    assert!((ts.get(st(1), st(3)) - 2.0 * GAMMA.powi(6)).abs() < 1e-9);
    assert!((ts.get(st(1), st(2)) - GAMMA.powi(6)).abs() < 1e-9);
    let tau = tau_map(&beam, GAMMA).unwrap();
    let path: Vec<usize> = tau_path(&tau, beam.start())
        .iter()
        .map(|s| s.label())
        .collect();
    assert_eq!(path, vec![1, 3, 5, 7, 9, 11, 13, 15]);
}

#[test]
fn removing_the_skill_keeps_t_sharp() {
    let with = small(5);
    let without = with.without_action(skill_action(5)).unwrap();
    let a = t_sharp(&with, GAMMA, DEFAULT_TOL).unwrap();
    let b = t_sharp(&without, GAMMA, DEFAULT_TOL).unwrap();
    assert_eq!(
        a.entries().collect::<Vec<_>>(),
        b.entries().collect::<Vec<_>>()
    );
    assert!(!precision_check(&without, GAMMA, DEFAULT_TOL).unwrap().holds);
}

#[test]
fn q_star_by_hand() {
    let vi = value_iteration(&small(5), GAMMA, DEFAULT_TOL).unwrap();
    assert!((vi.q_star.get(st(1), skill_action(5)) - 1.3175).abs() < 1e-9);
    assert!((vi.q_star.get(st(3), act(1)) - 1.0).abs() < 1e-9);
    let expect: Vec<ActionId> = (5..10).map(ActionId).collect();
    assert_eq!(vi.optimal_actions[0], expect);
}

/// Counters holding every `(s, a, s')` with its exact probability ratio.
fn exact_counters(mdp: &Mdp) -> Counters {
    let mut c = Counters::new(mdp.num_states(), mdp.num_actions());
    let order: Vec<StateId> = mdp.non_terminal_states().collect();
    for rec in stratified_sweep(mdp, &order, 10) {
        c.observe(&rec);
    }
    c
}

#[test]
fn t_sharp_with_exact_counts_is_optimal_when_precision_holds() {
    for p in [1.0, 0.6] {
        let mut params = SkillEnvParams::small(4);
        params.skill_success_prob = p;
        let mdp = build_small_skill_mdp(&params).unwrap();
        let oracle = OracleSolution::solve(&mdp, GAMMA, DEFAULT_TOL).unwrap();
        let counters = exact_counters(&mdp);
        for s in mdp.non_terminal_states() {
            let greedy = t_greedy_set(s, &oracle.t_sharp, &counters, 0.75);
            assert_eq!(greedy, oracle.optimal_actions[s.0], "p={p} state {s}");
        }
        let view = LearnerView::Transitions {
            table: &oracle.t_sharp,
            counters: &counters,
            kappa: 0.75,
        };
        assert!(detect_policy_convergence(&view, &oracle, &mdp));
    }
}

#[test]
fn fresh_learners_are_not_converged_on_the_beam() {
    let beam = build_balance_beam(&SkillEnvParams::beam(50)).unwrap();
    let oracle = OracleSolution::solve(&beam, GAMMA, DEFAULT_TOL).unwrap();
    let table = TransitionValueTable::new(beam.num_states(), 0.0);
    let counters = Counters::new(beam.num_states(), beam.num_actions());
    let view = LearnerView::Transitions {
        table: &table,
        counters: &counters,
        kappa: 0.75,
    };
    assert!(!detect_policy_convergence(&view, &oracle, &beam));
}

/// Fixed uniform policy values of the on-policy pair, learned from
/// stratified episodes (second steps before first steps in every sweep).
fn learn_uniform_pair(mdp: &Mdp, sweeps: usize) -> (TransitionValueTable, VTable) {
    let cfg = LearnerConfig::harmonic(GAMMA);
    let terminals = mdp.terminal_mask().to_vec();
    let episodes = stratified_episodes(mdp, 2);
    let mut tp = TransitionValueTable::new(mdp.num_states(), 0.0);
    let mut v = VTable::new(&terminals, 0.0);
    for _ in 0..sweeps {
        for depth in [1, 0] {
            for ep in &episodes {
                if let Some(rec) = ep.get(depth) {
                    onpolicy_t_step(&mut tp, rec, ep.get(depth + 1), &cfg).unwrap();
                    td0_step(&mut v, rec, &cfg, &terminals);
                }
            }
        }
    }
    (tp, v)
}

#[test]
fn uniform_policy_values_match_a_direct_linear_solve() {
    let mdp = small(1);
    let v_pi = uniform_policy_values(&mdp, GAMMA);
    let (tp, v) = learn_uniform_pair(&mdp, 20);
    for s in mdp.states() {
        assert!((v.get(s) - v_pi[s.0]).abs() < 1e-6, "V({s})");
    }
    // T_pi(s, s') = R(s, s') + gamma V_pi(s') from the same linear solve.
    for (s, t, val) in tp.entries() {
        let expect = mdp.arrival_reward(s, t).unwrap() + GAMMA * v_pi[t.0];
        assert!((val - expect).abs() < 1e-6, "T({s},{t})");
    }
    // With n = 1 the uniform policy reaches 5 from 3 with probability 2/3
    // (a* is reliable), so T_pi(1,3) = 0.85 * 2/3 * 2.
    assert!((tp.get(st(1), st(3)) - GAMMA * 2.0 * 2.0 / 3.0).abs() < 1e-9);
    assert!((tp.get(st(3), st(5)) - 2.0).abs() < 1e-12);
}

struct AlwaysSkill(ActionId);

impl Agent for AlwaysSkill {
    fn select_action(&mut self, _s: StateId, _rng: &mut RngStream) -> Result<ActionId> {
        Ok(self.0)
    }
    fn observe(&mut self, _rec: &StepRecord, _terminal: bool) {}
}

#[test]
fn skill_only_episodes_end_in_4_or_5() {
    let mdp = small(5);
    let mut rng = RngStream::new(3);
    let mut seen = [false; 2];
    for _ in 0..200 {
        let trace = run_episode(&mdp, &mut AlwaysSkill(skill_action(5)), &mut rng, 100).unwrap();
        assert_eq!(trace.len(), 2);
        assert!(!trace.truncated);
        match trace.final_state().unwrap().label() {
            4 => seen[0] = true,
            5 => seen[1] = true,
            other => panic!("ended in {other}"),
        }
    }
    assert_eq!(seen, [true, true]);
    let a = run_episode(&mdp, &mut AlwaysSkill(act(1)), &mut RngStream::new(9), 1).unwrap();
    assert_eq!(a.len(), 1);
    assert!(a.truncated);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn raising_a_reward_never_lowers_values(edge in 0usize..64, bump in 0.0f64..3.0) {
        let base = small(2);
        let edges = base.edges();
        let (s, t) = edges[edge % edges.len()];
        let mut raised = base.clone();
        raised.set_reward(s, t, base.arrival_reward(s, t).unwrap() + bump).unwrap();
        let (a, b) = (
            value_iteration(&base, GAMMA, DEFAULT_TOL).unwrap(),
            value_iteration(&raised, GAMMA, DEFAULT_TOL).unwrap(),
        );
        for i in 0..a.v_star.len() {
            prop_assert!(b.v_star[i] >= a.v_star[i] - 1e-9);
        }
        let (ta, tb) = (
            t_sharp(&base, GAMMA, DEFAULT_TOL).unwrap(),
            t_sharp(&raised, GAMMA, DEFAULT_TOL).unwrap(),
        );
        for (s, t, v) in ta.entries() {
            prop_assert!(tb.get(s, t) >= v - 1e-9);
        }
    }

    #[test]
    fn precision_flips_at_the_skill_threshold(p in 0.0f64..1.0) {
        prop_assume!((p - 0.55).abs() > 1e-6);
        let mut params = SkillEnvParams::small(3);
        params.skill_success_prob = p;
        let mdp = build_small_skill_mdp(&params).unwrap();
        let holds = precision_check(&mdp, GAMMA, DEFAULT_TOL).unwrap().holds;
        prop_assert_eq!(holds, p > 0.55);
    }
}
