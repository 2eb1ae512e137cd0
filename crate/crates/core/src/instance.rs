//! A complete policy-evaluation instance and its plain-text file format.
//!
//! ```text
//! mdp <n_states> <n_actions> <gamma>
//! <n_states * n_actions lines of n_states transition probabilities, row (s, a)>
//! <n_states * n_actions lines of n_states rewards, row (s, a)>
//! target
//! <n_states lines of n_actions probabilities>
//! behavior
//! <n_states lines of n_actions probabilities>
//! features <q>
//! <n_states lines of q feature values>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Numbers are written
//! with 17 significant digits so a write/read cycle is lossless.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{GtdError, Result};
use crate::exact::{self, EvalProblem};
use crate::mdp::{self, Features, Mdp, Policy, ValidationReport};

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub mdp: Mdp,
    pub target: Policy,
    pub behavior: Policy,
    pub features: Features,
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Instance {
    pub fn validate(&self) -> ValidationReport {
        mdp::validate_mdp(&self.mdp, &self.target, &self.behavior, &self.features)
    }

    pub fn problem(&self) -> Result<EvalProblem> {
        exact::build_problem(&self.mdp, &self.target, &self.behavior, &self.features)
    }

    pub fn to_text(&self) -> String {
        let (ns, na) = (self.mdp.n_states(), self.mdp.n_actions());
        let mut out = String::new();
        writeln!(out, "mdp {ns} {na} {}", fmt_f64(self.mdp.gamma())).unwrap();
        for m in [self.mdp.transition(), self.mdp.reward()] {
            write_rows(&mut out, m);
        }
        out.push_str("target\n");
        write_rows(&mut out, self.target.probs());
        out.push_str("behavior\n");
        write_rows(&mut out, self.behavior.probs());
        writeln!(out, "features {}", self.features.q()).unwrap();
        write_rows(&mut out, self.features.matrix());
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (line, header) = lines.next().ok_or(GtdError::Parse { line: 0, msg: "empty instance file".into() })?;
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() != 4 || head[0] != "mdp" {
            return Err(GtdError::Parse { line, msg: "expected 'mdp <n_states> <n_actions> <gamma>'".into() });
        }
        let ns: usize = parse(head[1], line)?;
        let na: usize = parse(head[2], line)?;
        let gamma: f64 = parse(head[3], line)?;

        let transition = read_block(&mut lines, ns * na, ns)?;
        let reward = read_block(&mut lines, ns * na, ns)?;
        expect_keyword(&mut lines, "target")?;
        let target = read_block(&mut lines, ns, na)?;
        expect_keyword(&mut lines, "behavior")?;
        let behavior = read_block(&mut lines, ns, na)?;
        let (line, fhead) = lines.next().ok_or(GtdError::Parse { line: 0, msg: "missing features block".into() })?;
        let q = match fhead.split_whitespace().collect::<Vec<_>>()[..] {
            ["features", q] => parse::<usize>(q, line)?,
            _ => return Err(GtdError::Parse { line, msg: "expected 'features <q>'".into() }),
        };
        let phi = read_block(&mut lines, ns, q)?;
        if let Some((line, _)) = lines.next() {
            return Err(GtdError::Parse { line, msg: "trailing content".into() });
        }

        Ok(Self {
            mdp: Mdp::new(ns, na, transition, reward, gamma)?,
            target: Policy::new(target),
            behavior: Policy::new(behavior),
            features: Features::new(phi)?,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn write_rows(out: &mut String, m: &DMatrix<f64>) {
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
}

fn parse<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse().map_err(|_| GtdError::Parse { line, msg: format!("cannot parse '{tok}'") })
}

fn expect_keyword<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, kw: &str) -> Result<()> {
    match lines.next() {
        Some((_, l)) if l == kw => Ok(()),
        Some((line, l)) => Err(GtdError::Parse { line, msg: format!("expected '{kw}', found '{l}'") }),
        None => Err(GtdError::Parse { line: 0, msg: format!("missing '{kw}' block") }),
    }
}

fn read_block<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    rows: usize,
    cols: usize,
) -> Result<DMatrix<f64>> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let (line, l) = lines.next().ok_or(GtdError::Parse { line: 0, msg: "unexpected end of file".into() })?;
        let before = data.len();
        for tok in l.split_whitespace() {
            data.push(parse::<f64>(tok, line)?);
        }
        if data.len() - before != cols {
            return Err(GtdError::Parse {
                line,
                msg: format!("expected {cols} values, found {}", data.len() - before),
            });
        }
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}
