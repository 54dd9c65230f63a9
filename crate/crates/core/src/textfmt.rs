//! Line-oriented sectioned text dialect shared by MDP files and experiment
//! configs.
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! free-form statement
//! ```
//!
//! Blank lines and `#` comments are ignored everywhere.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Statement<'a> {
    pub line: usize,
    pub text: &'a str,
}

#[derive(Debug, Clone)]
pub struct Section<'a> {
    pub name: &'a str,
    pub line: usize,
    pub statements: Vec<Statement<'a>>,
}

impl<'a> Section<'a> {
    /// Interprets every statement as `key = value`.
    pub fn key_values(&self) -> Result<Vec<(usize, &'a str, &'a str)>> {
        self.statements
            .iter()
            .map(|st| {
                let (k, v) = st.text.split_once('=').ok_or_else(|| {
                    Error::parse(
                        st.line,
                        format!("expected `key = value`, got `{}`", st.text),
                    )
                })?;
                Ok((st.line, k.trim(), v.trim()))
            })
            .collect()
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Splits `text` into sections. Statements before the first header are an
/// error.
pub fn parse_sections(text: &str) -> Result<Vec<Section<'_>>> {
    let mut sections: Vec<Section<'_>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = strip_comment(raw).trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::parse(line, "unterminated section header"))?
                .trim();
            if name.is_empty() {
                return Err(Error::parse(line, "empty section name"));
            }
            if sections.iter().any(|s| s.name == name) {
                return Err(Error::parse(line, format!("duplicate section [{name}]")));
            }
            sections.push(Section {
                name,
                line,
                statements: Vec::new(),
            });
            continue;
        }
        match sections.last_mut() {
            Some(sec) => sec.statements.push(Statement { line, text: body }),
            None => return Err(Error::parse(line, "statement outside of any [section]")),
        }
    }
    Ok(sections)
}

pub fn parse_num<T: std::str::FromStr>(line: usize, field: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::parse(line, format!("field `{field}`: cannot parse `{value}`")))
}

pub fn parse_bool(line: usize, field: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::parse(
            line,
            format!("field `{field}`: expected a boolean, got `{value}`"),
        )),
    }
}
