//! Discrete-time system model: update maps, shift operators, equilibria,
//! flat-output candidates, and parametrizations.

pub mod format;
#[cfg(test)]
pub(crate) mod test_fixtures;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::BigRational;

use crate::symbolic::calculus::substitute;
use crate::symbolic::expr::{mk_sub, simplify, Expr, Symbol};
use crate::symbolic::normal::{cancel_quotient, is_zero};
use crate::symbolic::rank::{generic_rank, RankError};
use crate::symbolic::{differentiate, Role, VarTable};

pub use format::{parse_system, FormatError};

/// A discrete-time system x+ = f(x, u) with a declared equilibrium.
#[derive(Clone, Debug)]
pub struct DiscreteSystem {
    pub name: String,
    pub states: Vec<Symbol>,
    pub inputs: Vec<Symbol>,
    /// Update expressions, one per state, over states, inputs, and params.
    pub updates: Vec<Expr>,
    /// Equilibrium values for every state and input symbol.
    pub equilibrium: BTreeMap<Symbol, BigRational>,
    /// Named nonzero rational constants such as a sampling time.
    pub params: BTreeMap<Symbol, BigRational>,
}

#[derive(Clone, Debug)]
pub enum SystemError {
    NoStates,
    NoInputs,
    UpdateCountMismatch { states: usize, updates: usize },
    ForeignSymbol { symbol: Symbol, update: usize },
    ShiftedSymbolInUpdate { symbol: Symbol, update: usize },
    MissingEquilibriumValue { symbol: Symbol },
    EquilibriumResiduals(Vec<Expr>),
    RankDeficient { rank: usize, need: usize },
    Sampling(RankError),
}

impl fmt::Display for SystemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SystemError::NoStates => write!(f, "system has no states"),
            SystemError::NoInputs => write!(f, "system has no inputs"),
            SystemError::UpdateCountMismatch { states, updates } => {
                write!(f, "{states} states but {updates} update laws")
            }
            SystemError::ForeignSymbol { symbol, update } => {
                write!(f, "update {update} references unregistered symbol `{symbol}`")
            }
            SystemError::ShiftedSymbolInUpdate { symbol, update } => {
                write!(f, "update {update} references shifted symbol `{symbol}`")
            }
            SystemError::MissingEquilibriumValue { symbol } => {
                write!(f, "no equilibrium value for `{symbol}`")
            }
            SystemError::EquilibriumResiduals(res) => {
                write!(f, "equilibrium residuals do not vanish: ")?;
                for (i, r) in res.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{r}")?;
                }
                Ok(())
            }
            SystemError::RankDeficient { rank, need } => {
                write!(f, "update map is not a submersion: rank {rank}, need {need}")
            }
            SystemError::Sampling(e) => write!(f, "rank sampling failed: {e}"),
        }
    }
}

impl std::error::Error for SystemError {}

/// Outcome of the equilibrium check.
#[derive(Clone, Debug, PartialEq)]
pub enum EquilibriumCheck {
    Ok,
    Residuals(Vec<Expr>),
}

impl DiscreteSystem {
    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn m(&self) -> usize {
        self.inputs.len()
    }

    /// Symbol table over states, inputs, and params.
    pub fn var_table(&self) -> VarTable {
        let mut t = VarTable::new();
        for s in &self.states {
            t.add(s.base(), Role::State);
        }
        for u in &self.inputs {
            t.add(u.base(), Role::Input);
        }
        for p in self.params.keys() {
            t.add(p.base(), Role::Parameter);
        }
        t
    }

    /// Equilibrium and parameter values merged into one exact point.
    pub fn base_point(&self) -> BTreeMap<Symbol, BigRational> {
        let mut p = self.equilibrium.clone();
        for (k, v) in &self.params {
            p.insert(k.clone(), v.clone());
        }
        p
    }

    /// All state and input symbols, states first.
    pub fn coords(&self) -> Vec<Symbol> {
        self.states.iter().chain(self.inputs.iter()).cloned().collect()
    }

    fn is_input_base(&self, base: &str) -> bool {
        self.inputs.iter().any(|u| u.base() == base)
    }

    fn is_state_base(&self, base: &str) -> bool {
        self.states.iter().any(|s| s.base() == base)
    }

    /// Forward shift: states are replaced by their updates and every input
    /// occurrence `u@k` moves to `u@(k+1)`, `times` times over. Quotients
    /// are reduced after every round — iterated substitution grows
    /// geometrically otherwise.
    pub fn shift_xu(&self, e: &Expr, times: u32) -> Expr {
        let mut out = e.clone();
        for _ in 0..times {
            let mut binds: BTreeMap<Symbol, Expr> = BTreeMap::new();
            for (s, f) in self.states.iter().zip(&self.updates) {
                binds.insert(s.clone(), f.clone());
            }
            for v in out.free_vars() {
                if self.is_input_base(v.base()) {
                    binds.insert(v.clone(), Expr::Var(v.shifted(1)));
                }
            }
            out = cancel_quotient(&substitute(&out, &binds));
        }
        out
    }

    /// Verifies f(x0, u0) = x0 exactly.
    pub fn check_equilibrium(&self) -> EquilibriumCheck {
        let binds: BTreeMap<Symbol, Expr> = self
            .base_point()
            .into_iter()
            .map(|(k, v)| (k, Expr::num(v)))
            .collect();
        let mut residuals = Vec::new();
        for (s, f) in self.states.iter().zip(&self.updates) {
            let lhs = substitute(f, &binds);
            let rhs = binds.get(s).cloned().unwrap_or_else(|| Expr::var(s));
            let r = simplify(&mk_sub(lhs, rhs));
            if !is_zero(&r) {
                residuals.push(r);
            }
        }
        if residuals.is_empty() {
            EquilibriumCheck::Ok
        } else {
            EquilibriumCheck::Residuals(residuals)
        }
    }

    /// Checks the structural invariants and the submersion rank condition.
    pub fn validate(&self, seed: u64) -> Result<(), SystemError> {
        if self.states.is_empty() {
            return Err(SystemError::NoStates);
        }
        if self.inputs.is_empty() {
            return Err(SystemError::NoInputs);
        }
        if self.updates.len() != self.states.len() {
            return Err(SystemError::UpdateCountMismatch {
                states: self.states.len(),
                updates: self.updates.len(),
            });
        }
        for (i, f) in self.updates.iter().enumerate() {
            for v in f.free_vars() {
                let known = self.is_state_base(v.base())
                    || self.is_input_base(v.base())
                    || self.params.contains_key(&Symbol::new(v.base()));
                if !known {
                    return Err(SystemError::ForeignSymbol { symbol: v, update: i });
                }
                if v.shift() != 0 {
                    return Err(SystemError::ShiftedSymbolInUpdate { symbol: v, update: i });
                }
            }
        }
        for c in self.coords() {
            if !self.equilibrium.contains_key(&c) {
                return Err(SystemError::MissingEquilibriumValue { symbol: c });
            }
        }
        if let EquilibriumCheck::Residuals(res) = self.check_equilibrium() {
            return Err(SystemError::EquilibriumResiduals(res));
        }
        let coords = self.coords();
        let jac: Vec<Vec<Expr>> = self
            .updates
            .iter()
            .map(|f| coords.iter().map(|c| differentiate(f, c)).collect())
            .collect();
        let rank = generic_rank(&jac, &coords, &self.base_point(), 8, seed)
            .map_err(SystemError::Sampling)?;
        if rank != self.n() {
            return Err(SystemError::RankDeficient { rank, need: self.n() });
        }
        Ok(())
    }

    /// Generic functional independence of the expressions together with
    /// their forward shifts up to `upto_shift`.
    pub fn functional_independence(
        &self,
        exprs: &[Expr],
        upto_shift: u32,
        seed: u64,
    ) -> Result<bool, RankError> {
        let mut rows_exprs: Vec<Expr> = Vec::new();
        for alpha in 0..=upto_shift {
            for e in exprs {
                rows_exprs.push(self.shift_xu(e, alpha));
            }
        }
        let mut coords: BTreeSet<Symbol> = BTreeSet::new();
        for e in &rows_exprs {
            for v in e.free_vars() {
                if !self.params.contains_key(&Symbol::new(v.base())) {
                    coords.insert(v);
                }
            }
        }
        let coords: Vec<Symbol> = coords.into_iter().collect();
        let jac: Vec<Vec<Expr>> = rows_exprs
            .iter()
            .map(|e| coords.iter().map(|c| differentiate(e, c)).collect())
            .collect();
        let rank = generic_rank(&jac, &coords, &self.base_point(), 8, seed)?;
        Ok(rank == rows_exprs.len())
    }
}

/// Candidate flat output y = phi(x, u, u_[1], ..., u_[q]).
#[derive(Clone, Debug)]
pub struct FlatOutputCandidate {
    pub components: Vec<Expr>,
    pub max_shift: u32,
}

impl FlatOutputCandidate {
    /// Wraps components, computing the highest input shift that appears.
    /// Fails if the count differs from dim(u) or a foreign symbol appears.
    pub fn new(components: Vec<Expr>, sys: &DiscreteSystem) -> Result<Self, String> {
        if components.len() != sys.m() {
            return Err(format!(
                "flat output must have {} components, got {}",
                sys.m(),
                components.len()
            ));
        }
        let mut q = 0u32;
        for c in &components {
            for v in c.free_vars() {
                if sys.is_state_base(v.base()) {
                    if v.shift() != 0 {
                        return Err(format!("shifted state `{v}` in flat output"));
                    }
                } else if sys.is_input_base(v.base()) {
                    q = q.max(v.shift());
                } else if !sys.params.contains_key(&Symbol::new(v.base())) {
                    return Err(format!("unknown symbol `{v}` in flat output"));
                }
            }
        }
        Ok(FlatOutputCandidate { components, max_shift: q })
    }
}

/// Parametrization (x, u) = F(y, ..., y_[R]) with multi-index R.
#[derive(Clone, Debug)]
pub struct Parametrization {
    /// Flat output symbols y^1..y^m at shift 0.
    pub y: Vec<Symbol>,
    /// State expressions over y-jets up to R-1 componentwise.
    pub f_x: Vec<Expr>,
    /// Input expressions over y-jets up to R.
    pub f_u: Vec<Expr>,
    /// Multi-index R: the number of shifts of each y component on which the
    /// parametrization depends.
    pub orders: Vec<u32>,
}

/// Shifts every occurrence of the given jet bases forward `times` steps:
/// y@k becomes y@(k+times).
pub fn shift_jets(e: &Expr, bases: &[Symbol], times: u32) -> Expr {
    if times == 0 {
        return simplify(e);
    }
    let mut binds: BTreeMap<Symbol, Expr> = BTreeMap::new();
    for v in e.free_vars() {
        if bases.iter().any(|b| b.base() == v.base()) {
            binds.insert(v.clone(), Expr::Var(v.shifted(times)));
        }
    }
    substitute(e, &binds)
}

impl Parametrization {
    /// Substitutes the parametrization into an expression over (x, u).
    pub fn apply(&self, e: &Expr, sys: &DiscreteSystem) -> Expr {
        let mut binds: BTreeMap<Symbol, Expr> = BTreeMap::new();
        for (s, fx) in sys.states.iter().zip(&self.f_x) {
            binds.insert(s.clone(), fx.clone());
        }
        for (u, fu) in sys.inputs.iter().zip(&self.f_u) {
            binds.insert(u.clone(), fu.clone());
        }
        substitute(e, &binds)
    }

    /// Structural check of the defining identity: the jet shift of each
    /// state expression equals the corresponding update law composed with
    /// the parametrization. Returns the non-vanishing residuals.
    pub fn identity_residuals(&self, sys: &DiscreteSystem) -> Vec<Expr> {
        let mut out = Vec::new();
        for (fx, f) in self.f_x.iter().zip(&sys.updates) {
            let lhs = shift_jets(fx, &self.y, 1);
            let rhs = self.apply(f, sys);
            let r = mk_sub(lhs, rhs);
            if !is_zero(&r) {
                out.push(simplify(&r));
            }
        }
        out
    }

    /// True when no state expression depends on the top jet order of any
    /// output component.
    pub fn states_avoid_top_jets(&self) -> bool {
        for fx in &self.f_x {
            for v in fx.free_vars() {
                if let Some(j) = self.y.iter().position(|y| y.base() == v.base()) {
                    if v.shift() >= self.orders[j] {
                        return false;
                    }
                }
            }
        }
        true
    }
}
