//! Text format for system descriptions.
//!
//! ```text
//! system <name>
//! states  x1 x2 ... xn
//! inputs  u1 ... um
//! param   T = 1/10
//! next x1 = <expr>
//! ...
//! equilibrium x1=0 x2=0 ... u1=0 ...
//! ```
//!
//! Lines starting with `#` are comments. Parameters are nonzero rational
//! constants.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

use crate::symbolic::parse::parse;
use crate::symbolic::{Expr, Role, Symbol, VarTable};

use super::DiscreteSystem;

#[derive(Clone, Debug)]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for FormatError {}

fn err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError { line, message: message.into() }
}

fn parse_rational(text: &str, line: usize) -> Result<BigRational, FormatError> {
    let (num_str, den_str) = match text.split_once('/') {
        Some((a, b)) => (a.trim(), b.trim()),
        None => (text.trim(), "1"),
    };
    let num: BigInt = num_str
        .parse()
        .map_err(|_| err(line, format!("invalid rational `{text}`")))?;
    let den: BigInt = den_str
        .parse()
        .map_err(|_| err(line, format!("invalid rational `{text}`")))?;
    if den.is_zero() {
        return Err(err(line, format!("zero denominator in `{text}`")));
    }
    Ok(BigRational::new(num, den))
}

/// Parses the system description format.
pub fn parse_system(text: &str) -> Result<DiscreteSystem, FormatError> {
    let mut name: Option<String> = None;
    let mut states: Vec<Symbol> = Vec::new();
    let mut inputs: Vec<Symbol> = Vec::new();
    let mut params: BTreeMap<Symbol, BigRational> = BTreeMap::new();
    let mut updates: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut equilibrium: BTreeMap<Symbol, BigRational> = BTreeMap::new();
    let mut saw_equilibrium = false;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (keyword, rest) = match line.split_once(char::is_whitespace) {
            Some((k, r)) => (k, r.trim()),
            None => (line, ""),
        };
        match keyword {
            "system" => {
                if name.is_some() {
                    return Err(err(lineno, "duplicate `system` line"));
                }
                if rest.is_empty() {
                    return Err(err(lineno, "missing system name"));
                }
                name = Some(rest.to_string());
            }
            "states" => {
                if !states.is_empty() {
                    return Err(err(lineno, "duplicate `states` line"));
                }
                for tok in rest.split_whitespace() {
                    states.push(Symbol::new(tok));
                }
            }
            "inputs" => {
                if !inputs.is_empty() {
                    return Err(err(lineno, "duplicate `inputs` line"));
                }
                for tok in rest.split_whitespace() {
                    inputs.push(Symbol::new(tok));
                }
            }
            "param" => {
                let (pname, value) = rest
                    .split_once('=')
                    .ok_or_else(|| err(lineno, "expected `param <name> = <rational>`"))?;
                let pname = pname.trim();
                if pname.is_empty() {
                    return Err(err(lineno, "missing parameter name"));
                }
                let v = parse_rational(value.trim(), lineno)?;
                if v.is_zero() {
                    return Err(err(lineno, format!("parameter `{pname}` must be nonzero")));
                }
                if params.insert(Symbol::new(pname), v).is_some() {
                    return Err(err(lineno, format!("duplicate parameter `{pname}`")));
                }
            }
            "next" => {
                let (target, expr_text) = rest
                    .split_once('=')
                    .ok_or_else(|| err(lineno, "expected `next <state> = <expr>`"))?;
                let target = target.trim().to_string();
                if updates.contains_key(&target) {
                    return Err(err(lineno, format!("duplicate update for `{target}`")));
                }
                updates.insert(target, (lineno, expr_text.trim().to_string()));
            }
            "equilibrium" => {
                if saw_equilibrium {
                    return Err(err(lineno, "duplicate `equilibrium` line"));
                }
                saw_equilibrium = true;
                for tok in rest.split_whitespace() {
                    let (sname, value) = tok
                        .split_once('=')
                        .ok_or_else(|| err(lineno, format!("expected `name=value`, got `{tok}`")))?;
                    let v = parse_rational(value, lineno)?;
                    equilibrium.insert(Symbol::new(sname), v);
                }
            }
            other => {
                return Err(err(lineno, format!("unknown keyword `{other}`")));
            }
        }
    }

    let name = name.ok_or_else(|| err(0, "missing `system` line"))?;
    if states.is_empty() {
        return Err(err(0, "missing `states` line"));
    }
    if inputs.is_empty() {
        return Err(err(0, "missing `inputs` line"));
    }

    let mut table = VarTable::new();
    for s in &states {
        if !table.add(s.base(), Role::State) {
            return Err(err(0, format!("duplicate or reserved name `{}`", s.base())));
        }
    }
    for u in &inputs {
        if !table.add(u.base(), Role::Input) {
            return Err(err(0, format!("duplicate or reserved name `{}`", u.base())));
        }
    }
    for p in params.keys() {
        if !table.add(p.base(), Role::Parameter) {
            return Err(err(0, format!("duplicate or reserved name `{}`", p.base())));
        }
    }

    let mut update_exprs: Vec<Expr> = Vec::with_capacity(states.len());
    for s in &states {
        let Some((lineno, text)) = updates.get(s.base()) else {
            return Err(err(0, format!("missing update law for `{}`", s.base())));
        };
        let e = parse(text, &table).map_err(|pe| err(*lineno, pe.to_string()))?;
        update_exprs.push(e);
    }
    for key in updates.keys() {
        if !states.iter().any(|s| s.base() == key) {
            return Err(err(0, format!("update for unknown state `{key}`")));
        }
    }

    if !saw_equilibrium {
        return Err(err(0, "missing `equilibrium` line"));
    }
    for c in states.iter().chain(inputs.iter()) {
        if !equilibrium.contains_key(c) {
            return Err(err(0, format!("missing equilibrium value for `{c}`")));
        }
    }
    for sym in equilibrium.keys() {
        let known = states.iter().any(|s| s == sym) || inputs.iter().any(|u| u == sym);
        if !known {
            return Err(err(0, format!("equilibrium value for unknown symbol `{sym}`")));
        }
    }

    Ok(DiscreteSystem {
        name,
        states,
        inputs,
        updates: update_exprs,
        equilibrium,
        params,
    })
}
