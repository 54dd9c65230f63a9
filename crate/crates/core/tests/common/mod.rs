#![allow(dead_code)]

use tlearn::mdp::{ActionId, Mdp, StateId, StepRecord};

pub fn st(label: usize) -> StateId {
    StateId(label - 1)
}

pub fn act(label: usize) -> ActionId {
    ActionId(label - 1)
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x
}

/// State values of the uniform random policy, by direct linear solve of
/// `V = r_pi + gamma P_pi V` (terminals pinned to 0).
pub fn uniform_policy_values(mdp: &Mdp, gamma: f64) -> Vec<f64> {
    let ns = mdp.num_states();
    let na = mdp.num_actions() as f64;
    let mut a = vec![vec![0.0; ns]; ns];
    let mut b = vec![0.0; ns];
    for s in mdp.states() {
        a[s.0][s.0] = 1.0;
        if mdp.is_terminal(s) {
            continue;
        }
        for act in mdp.actions() {
            for &(t, p) in mdp.row(s, act) {
                let w = p / na;
                b[s.0] += w * mdp.arrival_reward(s, t).unwrap();
                if !mdp.is_terminal(t) {
                    a[s.0][t.0] -= gamma * w;
                }
            }
        }
    }
    solve_linear(a, b)
}

/// Integer multiplicity of a probability on a grid of `1/denom`.
pub fn multiplicity(p: f64, denom: u32) -> u32 {
    let m = (p * denom as f64).round();
    assert!(
        (m - p * denom as f64).abs() < 1e-9,
        "{p} is not on the 1/{denom} grid"
    );
    m as u32
}

/// One stratified sweep over every `(s, a, s')` of the given states, each
/// repeated in proportion to its probability.
pub fn stratified_sweep(mdp: &Mdp, order: &[StateId], denom: u32) -> Vec<StepRecord> {
    let mut out = Vec::new();
    for &s in order {
        for a in mdp.actions() {
            for &(t, p) in mdp.row(s, a) {
                let r = mdp.arrival_reward(s, t).unwrap();
                for _ in 0..multiplicity(p, denom) {
                    out.push(StepRecord { s, a, s_next: t, r });
                }
            }
        }
    }
    out
}

/// Every episode of a two-step MDP under the uniform policy, each repeated
/// in proportion to its probability (times `(2n+1)^2 denom^2`).
pub fn stratified_episodes(mdp: &Mdp, denom: u32) -> Vec<Vec<StepRecord>> {
    let mut out = Vec::new();
    let s0 = mdp.start();
    for a in mdp.actions() {
        for &(t, p) in mdp.row(s0, a) {
            let first = StepRecord {
                s: s0,
                a,
                s_next: t,
                r: mdp.arrival_reward(s0, t).unwrap(),
            };
            let m1 = multiplicity(p, denom);
            if mdp.is_terminal(t) {
                for _ in 0..m1 * denom * mdp.num_actions() as u32 {
                    out.push(vec![first]);
                }
                continue;
            }
            for a2 in mdp.actions() {
                for &(t2, p2) in mdp.row(t, a2) {
                    assert!(mdp.is_terminal(t2), "episodes longer than two steps");
                    let second = StepRecord {
                        s: t,
                        a: a2,
                        s_next: t2,
                        r: mdp.arrival_reward(t, t2).unwrap(),
                    };
                    for _ in 0..m1 * multiplicity(p2, denom) {
                        out.push(vec![first, second]);
                    }
                }
            }
        }
    }
    out
}
