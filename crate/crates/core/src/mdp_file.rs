//! Text serialization of tabular MDPs.
//!
//! ```text
//! [meta]
//! name = small
//! num_states = 6
//! num_actions = 3
//! start = 1
//! terminals = 4 5 6
//!
//! [rewards]          # s s' value; unlisted kernel edges default to 0
//! 2 4 1.1
//!
//! [kernel]           # s action : successor prob [successor prob ...]
//! 1 1 : 2 1
//! 1 * : 3 1          # `*` covers every action without its own row
//! ```
//!
//! States and actions are 1-based.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mdp::{ActionId, Mdp, StateId};
use crate::textfmt::{parse_num, parse_sections, Section};

fn parse_state(line: usize, tok: &str, num_states: usize) -> Result<StateId> {
    let l: usize = parse_num(line, "state", tok)?;
    match StateId::from_label(l) {
        Some(s) if s.index() < num_states => Ok(s),
        _ => Err(Error::parse(
            line,
            format!("state {tok} out of range 1..={num_states}"),
        )),
    }
}

fn parse_action(line: usize, tok: &str, num_actions: usize) -> Result<ActionId> {
    let l: usize = parse_num(line, "action", tok)?;
    match ActionId::from_label(l) {
        Some(a) if a.index() < num_actions => Ok(a),
        _ => Err(Error::parse(
            line,
            format!("action {tok} out of range 1..={num_actions}"),
        )),
    }
}

struct Meta {
    name: String,
    num_states: usize,
    num_actions: usize,
    start: usize,
    start_line: usize,
    terminals: Vec<(usize, String)>,
}

fn parse_meta(sec: &Section<'_>) -> Result<Meta> {
    let mut name = None;
    let mut num_states = None;
    let mut num_actions = None;
    let mut start = None;
    let mut terminals = Vec::new();
    for (line, key, value) in sec.key_values()? {
        match key {
            "name" => name = Some(value.to_string()),
            "num_states" => num_states = Some(parse_num::<usize>(line, key, value)?),
            "num_actions" => num_actions = Some(parse_num::<usize>(line, key, value)?),
            "start" => start = Some((line, parse_num::<usize>(line, key, value)?)),
            "terminals" => {
                terminals = value
                    .split_whitespace()
                    .map(|t| (line, t.to_string()))
                    .collect()
            }
            other => return Err(Error::parse(line, format!("unknown meta field `{other}`"))),
        }
    }
    let (start_line, start) = start.ok_or_else(|| Error::MissingField("start".into()))?;
    Ok(Meta {
        name: name.unwrap_or_else(|| "mdp".into()),
        num_states: num_states.ok_or_else(|| Error::MissingField("num_states".into()))?,
        num_actions: num_actions.ok_or_else(|| Error::MissingField("num_actions".into()))?,
        start,
        start_line,
        terminals,
    })
}

/// Parses an MDP file. Structural validity (row sums etc.) is not checked
/// here; call [`Mdp::validate`] on the result.
pub fn load_mdp(text: &str) -> Result<Mdp> {
    let sections = parse_sections(text)?;
    for sec in &sections {
        if !matches!(sec.name, "meta" | "rewards" | "kernel") {
            return Err(Error::parse(
                sec.line,
                format!("unknown section [{}]", sec.name),
            ));
        }
    }
    let find = |name: &str| sections.iter().find(|s| s.name == name);
    let meta = parse_meta(find("meta").ok_or_else(|| Error::MissingField("meta".into()))?)?;
    let (ns, na) = (meta.num_states, meta.num_actions);
    if ns == 0 || na == 0 {
        return Err(Error::InvalidParams(
            "num_states and num_actions must be positive".into(),
        ));
    }
    let start = parse_state(meta.start_line, &meta.start.to_string(), ns)?;
    let mut mdp = Mdp::new(meta.name, ns, na, start)?;
    for (line, t) in &meta.terminals {
        mdp.set_terminal(parse_state(*line, t, ns)?, true)?;
    }

    if let Some(sec) = find("rewards") {
        for st in &sec.statements {
            let toks: Vec<&str> = st.text.split_whitespace().collect();
            let [s, t, v] = toks[..] else {
                return Err(Error::parse(st.line, "reward lines are `s s' value`"));
            };
            let s = parse_state(st.line, s, ns)?;
            let t = parse_state(st.line, t, ns)?;
            mdp.set_reward(s, t, parse_num(st.line, "reward", v)?)?;
        }
    }

    let kernel = find("kernel").ok_or_else(|| Error::MissingField("kernel".into()))?;
    let mut explicit: HashMap<(StateId, ActionId), usize> = HashMap::new();
    let mut wildcard: HashMap<StateId, (usize, Vec<(StateId, f64)>)> = HashMap::new();
    for st in &kernel.statements {
        let (head, tail) = st.text.split_once(':').ok_or_else(|| {
            Error::parse(st.line, "kernel lines are `s action : successor prob ...`")
        })?;
        let head: Vec<&str> = head.split_whitespace().collect();
        let [s, a] = head[..] else {
            return Err(Error::parse(
                st.line,
                "kernel line must start with `s action`",
            ));
        };
        let s = parse_state(st.line, s, ns)?;
        let toks: Vec<&str> = tail.split_whitespace().collect();
        if toks.is_empty() || toks.len() % 2 != 0 {
            return Err(Error::parse(
                st.line,
                "successor list must be non-empty `state prob` pairs",
            ));
        }
        let row = toks
            .chunks(2)
            .map(|c| {
                Ok((
                    parse_state(st.line, c[0], ns)?,
                    parse_num::<f64>(st.line, "probability", c[1])?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        if a == "*" {
            if wildcard.insert(s, (st.line, row)).is_some() {
                return Err(Error::parse(
                    st.line,
                    format!("second wildcard row for state {s}"),
                ));
            }
        } else {
            let a = parse_action(st.line, a, na)?;
            if let Some(prev) = explicit.insert((s, a), st.line) {
                return Err(Error::parse(
                    st.line,
                    format!("row ({s}, {a}) already given on line {prev}"),
                ));
            }
            mdp.set_row(s, a, row)?;
        }
    }
    for (s, (_, row)) in wildcard {
        for a in mdp.actions().collect::<Vec<_>>() {
            if !explicit.contains_key(&(s, a)) {
                mdp.set_row(s, a, row.iter().copied())?;
            }
        }
    }

    let mut edges = Vec::new();
    for s in mdp.states() {
        for a in mdp.actions() {
            edges.extend(
                mdp.row(s, a)
                    .iter()
                    .filter(|e| e.1 > 0.0)
                    .map(|&(t, _)| (s, t)),
            );
        }
    }
    for (s, t) in edges {
        if mdp.arrival_reward(s, t).is_none() {
            mdp.set_reward(s, t, 0.0)?;
        }
    }
    Ok(mdp)
}

fn write_row(out: &mut String, row: &[(StateId, f64)]) {
    for (t, p) in row {
        let _ = write!(out, " {t} {p}");
    }
    out.push('\n');
}

/// Renders `mdp` in the file format. Every defined reward is written
/// explicitly; the most common kernel row of each state becomes a `*` row.
pub fn serialize_mdp(mdp: &Mdp) -> String {
    let mut out = String::new();
    let terminals: Vec<String> = mdp.terminals().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "[meta]");
    let _ = writeln!(out, "name = {}", mdp.name());
    let _ = writeln!(out, "num_states = {}", mdp.num_states());
    let _ = writeln!(out, "num_actions = {}", mdp.num_actions());
    let _ = writeln!(out, "start = {}", mdp.start());
    let _ = writeln!(out, "terminals = {}", terminals.join(" "));
    let _ = writeln!(out, "\n[rewards]");
    for (s, t, r) in mdp.rewards() {
        let _ = writeln!(out, "{s} {t} {r}");
    }
    let _ = writeln!(out, "\n[kernel]");
    for s in mdp.states() {
        let rows: Vec<&[(StateId, f64)]> = mdp.actions().map(|a| mdp.row(s, a)).collect();
        if rows.iter().all(|r| r.is_empty()) {
            continue;
        }
        // A wildcard would fill empty rows on reload, so only use one when
        // every action has a row.
        let common = if rows.iter().any(|r| r.is_empty()) {
            None
        } else {
            let mut best: Option<(&[(StateId, f64)], usize)> = None;
            for r in &rows {
                let count = rows.iter().filter(|o| *o == r).count();
                if best.is_none_or(|(_, c)| count > c) {
                    best = Some((r, count));
                }
            }
            best.filter(|&(_, c)| c >= 2).map(|(r, _)| r)
        };
        for (a, row) in mdp.actions().zip(&rows) {
            if row.is_empty() || Some(*row) == common {
                continue;
            }
            let _ = write!(out, "{s} {a} :");
            write_row(&mut out, row);
        }
        if let Some(row) = common {
            let _ = write!(out, "{s} * :");
            write_row(&mut out, row);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{build_balance_beam, build_small_skill_mdp, SkillEnvParams};

    #[test]
    fn round_trip_small() {
        let m = build_small_skill_mdp(&SkillEnvParams::small(1)).unwrap();
        let text = serialize_mdp(&m);
        assert_eq!(load_mdp(&text).unwrap(), m);
    }

    #[test]
    fn wildcard_keeps_beam_file_small() {
        let m = build_balance_beam(&SkillEnvParams::beam(50)).unwrap();
        let text = serialize_mdp(&m);
        assert!(text.lines().count() < 150, "{} lines", text.lines().count());
        assert_eq!(load_mdp(&text).unwrap(), m);
    }

    #[test]
    fn bad_row_sum_loads_but_fails_validation() {
        let text = "[meta]\nnum_states = 2\nnum_actions = 1\nstart = 1\nterminals = 2\n[kernel]\n1 1 : 2 1.1\n";
        let m = load_mdp(text).unwrap();
        let v = m.validate();
        assert!(
            v.iter()
                .any(|x| x.to_string() == "row (s=1,a=1) sums to 1.1"),
            "{v:?}"
        );
    }

    #[test]
    fn missing_start_is_named() {
        let text = "[meta]\nnum_states = 2\nnum_actions = 1\n[kernel]\n1 1 : 2 1\n";
        match load_mdp(text) {
            Err(Error::MissingField(f)) => assert_eq!(f, "start"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "[meta]\nnum_states = 2\nnum_actions = 1\nstart = 1\n[kernel]\n1 1 : 3 1\n";
        let err = load_mdp(text).unwrap_err().to_string();
        assert!(err.starts_with("line 6"), "{err}");
        let text = "[meta]\nnum_states = x\n";
        assert!(load_mdp(text)
            .unwrap_err()
            .to_string()
            .contains("num_states"));
    }

    #[test]
    fn unlisted_rewards_default_to_zero() {
        let text = "[meta]\nnum_states = 2\nnum_actions = 2\nstart = 1\nterminals = 2\n[kernel]\n1 * : 2 1\n";
        let m = load_mdp(text).unwrap();
        assert_eq!(m.arrival_reward(StateId(0), StateId(1)), Some(0.0));
        assert!(m.validate().is_empty());
    }
}
