//! Generators for the skill benchmarks: the six-state fork and the balance
//! beam.
//!
//! Both environments share one layout. Action indices `0..n` lead from the
//! start to the easy branch, `n..2n` lead to the skill branch, and the last
//! action (`2n`) is the skilled action `a*`, which forks 50/50 at the start
//! but crosses skill-branch states reliably.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionId, Mdp, StateId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillEnvParams {
    /// Half of the deterministic action pool; there are `2n + 1` actions.
    pub n: usize,
    /// Transitions along each chain of the beam.
    pub beam_hops: usize,
    pub reward_easy: f64,
    pub reward_skill: f64,
    /// Probability that `a*` advances along the skill branch.
    pub skill_success_prob: f64,
}

impl SkillEnvParams {
    /// Defaults of the six-state fork: easy reward 1.1.
    pub fn small(n: usize) -> Self {
        Self {
            n,
            beam_hops: 1,
            reward_easy: 1.1,
            reward_skill: 2.0,
            skill_success_prob: 1.0,
        }
    }

    /// Defaults of the 16-state balance beam: six hops, easy reward 1.
    pub fn beam(n: usize) -> Self {
        Self {
            n,
            beam_hops: 6,
            reward_easy: 1.0,
            reward_skill: 2.0,
            skill_success_prob: 1.0,
        }
    }

    pub fn num_actions(&self) -> usize {
        2 * self.n + 1
    }

    pub fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParams("n must be at least 1".into()));
        }
        if self.beam_hops == 0 {
            return Err(Error::InvalidParams("beam_hops must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.skill_success_prob) {
            return Err(Error::InvalidParams(format!(
                "skill_success_prob {} is outside [0, 1]",
                self.skill_success_prob
            )));
        }
        if !self.reward_easy.is_finite() || !self.reward_skill.is_finite() {
            return Err(Error::InvalidParams("rewards must be finite".into()));
        }
        Ok(())
    }
}

/// The skilled action `a*` for a pool of half-size `n`.
pub fn skill_action(n: usize) -> ActionId {
    ActionId(2 * n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Small,
    Beam,
}

impl EnvKind {
    pub fn default_params(self, n: usize) -> SkillEnvParams {
        match self {
            EnvKind::Small => SkillEnvParams::small(n),
            EnvKind::Beam => SkillEnvParams::beam(n),
        }
    }

    pub fn build(self, params: &SkillEnvParams) -> Result<Mdp> {
        match self {
            EnvKind::Small => build_small_skill_mdp(params),
            EnvKind::Beam => build_balance_beam(params),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Small => "small",
            EnvKind::Beam => "beam",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(EnvKind::Small),
            "beam" | "balance_beam" => Ok(EnvKind::Beam),
            other => Err(Error::InvalidParams(format!(
                "unknown environment `{other}`"
            ))),
        }
    }
}

fn label(l: usize) -> StateId {
    StateId(l - 1)
}

fn skill_row(p: f64, success: StateId, fail: StateId) -> Vec<(StateId, f64)> {
    if p >= 1.0 {
        vec![(success, 1.0)]
    } else if p <= 0.0 {
        vec![(fail, 1.0)]
    } else {
        vec![(success, p), (fail, 1.0 - p)]
    }
}

fn set_fork(mdp: &mut Mdp, n: usize, start: StateId, easy: StateId, skill: StateId) -> Result<()> {
    for a in 0..n {
        mdp.set_row(start, ActionId(a), [(easy, 1.0)])?;
        mdp.set_row(start, ActionId(n + a), [(skill, 1.0)])?;
    }
    mdp.set_row(start, skill_action(n), [(easy, 0.5), (skill, 0.5)])
}

/// Defines `R(s, s')` on every edge of the kernel from the arrival value of
/// `s'`.
fn set_edge_rewards(mdp: &mut Mdp, arrival: impl Fn(StateId) -> f64) -> Result<()> {
    for (s, t) in mdp.edges() {
        mdp.set_reward(s, t, arrival(t))?;
    }
    Ok(())
}

/// The six-state fork: 1 -> {2, 3}; 2 -> 4 (easy reward); 3 -> 5 (skill
/// reward) or 6 (nothing).
pub fn build_small_skill_mdp(params: &SkillEnvParams) -> Result<Mdp> {
    params.check()?;
    let n = params.n;
    let a_star = skill_action(n);
    let mut mdp = Mdp::new("small", 6, params.num_actions(), label(1))?;
    for t in [4, 5, 6] {
        mdp.set_terminal(label(t), true)?;
    }
    set_fork(&mut mdp, n, label(1), label(2), label(3))?;
    for a in mdp.actions().collect::<Vec<_>>() {
        mdp.set_row(label(2), a, [(label(4), 1.0)])?;
        if a == a_star {
            mdp.set_row(
                label(3),
                a,
                skill_row(params.skill_success_prob, label(5), label(6)),
            )?;
        } else {
            mdp.set_row(label(3), a, [(label(5), 0.5), (label(6), 0.5)])?;
        }
    }
    let (easy, skill) = (params.reward_easy, params.reward_skill);
    set_edge_rewards(&mut mdp, |t| match t.label() {
        4 => easy,
        5 => skill,
        _ => 0.0,
    })?;
    Ok(mdp)
}

/// The balance beam. With `h = beam_hops` the states are: 1 (start), the
/// even chain `2, 4, .., 2h+2`, the odd chain `3, 5, .., 2h+3` and the fall
/// state `2h+4`. The chain ends and the fall state are terminal.
pub fn build_balance_beam(params: &SkillEnvParams) -> Result<Mdp> {
    params.check()?;
    let n = params.n;
    let h = params.beam_hops;
    let a_star = skill_action(n);
    let num_states = 2 * h + 4;
    let easy_end = label(2 * h + 2);
    let skill_end = label(2 * h + 3);
    let fall = label(2 * h + 4);

    let mut mdp = Mdp::new("beam", num_states, params.num_actions(), label(1))?;
    for t in [easy_end, skill_end, fall] {
        mdp.set_terminal(t, true)?;
    }
    set_fork(&mut mdp, n, label(1), label(2), label(3))?;
    let actions: Vec<ActionId> = mdp.actions().collect();
    for k in 0..h {
        let even = label(2 + 2 * k);
        let odd = label(3 + 2 * k);
        let (even_next, odd_next) = (label(4 + 2 * k), label(5 + 2 * k));
        for &a in &actions {
            mdp.set_row(even, a, [(even_next, 1.0)])?;
            if a == a_star {
                mdp.set_row(odd, a, skill_row(params.skill_success_prob, odd_next, fall))?;
            } else {
                mdp.set_row(odd, a, [(odd_next, 0.5), (fall, 0.5)])?;
            }
        }
    }
    let (easy, skill) = (params.reward_easy, params.reward_skill);
    set_edge_rewards(&mut mdp, |t| {
        if t == easy_end {
            easy
        } else if t == skill_end {
            skill
        } else {
            0.0
        }
    })?;
    Ok(mdp)
}
