//! Self-contained computer-algebra kernel: expression trees, parsing,
//! printing, exact arithmetic, differentiation, substitution, normalization,
//! and symbolic linear solving.

pub mod calculus;
pub mod elim;
pub mod expr;
pub mod linsolve;
pub mod normal;
pub mod parse;
pub mod rank;

pub use calculus::{differentiate, evaluate, substitute, EvalError, Value};
pub use elim::{solve_cascade, solve_triangular, ElimResult};
pub use expr::{mk_add, mk_apply, mk_div, mk_mul, mk_neg, mk_pow, mk_sub, simplify, Expr, Func, Symbol};
pub use linsolve::{solve_linear_symbolic, LinearSolution, NotAffine, SolveOutput};
pub use normal::{cancel_quotient, equivalent, expand, is_zero, rationalize};
pub use parse::{parse, parse_any, ParseError};
pub use rank::{generic_rank, RankError, Sampler};

use std::collections::BTreeMap;
use std::fmt;

/// Role a registered symbol plays in the coordinate bookkeeping.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Role {
    State,
    Input,
    ShiftedState,
    ShiftedInput,
    Fibre,
    Parameter,
}

/// Registry of known symbol names with their roles.
///
/// Shifted occurrences like `u1@2` share the base registration of `u1`.
#[derive(Clone, Debug, Default)]
pub struct VarTable {
    order: Vec<String>,
    roles: BTreeMap<String, Role>,
}

impl VarTable {
    pub fn new() -> Self {
        VarTable::default()
    }

    /// Registers a base name. Returns false if the name is already taken or
    /// collides with a function name.
    pub fn add(&mut self, name: &str, role: Role) -> bool {
        if Func::from_name(name).is_some() || self.roles.contains_key(name) {
            return false;
        }
        self.order.push(name.to_string());
        self.roles.insert(name.to_string(), role);
        true
    }

    pub fn contains(&self, name: &str) -> bool {
        self.roles.contains_key(name)
    }

    pub fn role(&self, name: &str) -> Option<Role> {
        self.roles.get(name).copied()
    }

    /// Registered names in registration order.
    pub fn names(&self) -> &[String] {
        &self.order
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::State => "state",
            Role::Input => "input",
            Role::ShiftedState => "shifted-state",
            Role::ShiftedInput => "shifted-input",
            Role::Fibre => "fibre",
            Role::Parameter => "parameter",
        };
        f.write_str(s)
    }
}
