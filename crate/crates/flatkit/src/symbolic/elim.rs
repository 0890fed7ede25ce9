//! Cascaded elimination for equation systems that are affine in each unknown
//! separately, with coefficients that become known as other unknowns resolve.
//!
//! This is the workhorse behind coordinate-change inversion and candidate
//! verification: repeatedly pick an equation affine in one unknown whose
//! coefficient is free of unknowns, solve, substitute through everything,
//! and keep going. Definitions whose right side still mentions unsolved
//! unknowns are held as pending and promoted once their unknowns resolve.

use std::collections::BTreeMap;

use super::calculus::{differentiate, substitute};
use super::expr::{drop_rational_coef, mk_div, mk_neg, simplify, Expr, Symbol};
use super::normal::{collapse, is_zero};

#[derive(Clone, Debug, Default)]
pub struct ElimResult {
    /// Unknowns resolved to expressions free of all unknowns.
    pub solutions: BTreeMap<Symbol, Expr>,
    /// Unknowns expressed in terms of still-unsolved unknowns.
    pub pending: BTreeMap<Symbol, Expr>,
    /// Equations not consumed by any elimination step (nonzero residue).
    pub residual: Vec<Expr>,
    /// Non-constant divisors assumed nonzero along the way.
    pub assumptions: Vec<Expr>,
}

/// Solves `equations = 0` for as many of `unknowns` as possible.
pub fn solve_cascade(equations: &[Expr], unknowns: &[Symbol]) -> ElimResult {
    run_cascade(equations, unknowns, false)
}

/// Like [`solve_cascade`], but every step must produce a right side already
/// free of unknowns; no pending definitions are created. Use where a solution
/// chain with forward references is not acceptable.
pub fn solve_triangular(equations: &[Expr], unknowns: &[Symbol]) -> ElimResult {
    run_cascade(equations, unknowns, true)
}

fn run_cascade(equations: &[Expr], unknowns: &[Symbol], ground_only: bool) -> ElimResult {
    let mut remaining: Vec<Expr> = equations
        .iter()
        .map(simplify)
        .filter(|e| !is_zero(e))
        .collect();
    let mut unsolved: Vec<Symbol> = unknowns.to_vec();
    let mut defs: BTreeMap<Symbol, Expr> = BTreeMap::new();
    let mut assumptions: Vec<Expr> = Vec::new();

    loop {
        let Some((eq_idx, unknown, rhs, divisor)) = find_step(&remaining, &unsolved, ground_only)
        else {
            break;
        };
        if let Some(d) = divisor {
            if !assumptions.contains(&d) {
                assumptions.push(d);
            }
        }
        remaining.remove(eq_idx);
        unsolved.retain(|s| s != &unknown);
        let mut binding = BTreeMap::new();
        binding.insert(unknown.clone(), rhs.clone());
        // collapse after every push: cancellations buried under products must
        // surface syntactically, or the ground/pending split misclassifies
        for def in defs.values_mut() {
            *def = collapse(&substitute(def, &binding));
        }
        remaining = remaining
            .iter()
            .map(|e| collapse(&substitute(e, &binding)))
            .filter(|e| !is_zero(e))
            .collect();
        defs.insert(unknown, rhs);
    }

    let mut result = ElimResult { residual: remaining, assumptions, ..Default::default() };
    for (sym, rhs) in defs {
        if unknowns.iter().any(|u| rhs.contains(u)) {
            result.pending.insert(sym, rhs);
        } else {
            result.solutions.insert(sym, rhs);
        }
    }
    result
}

/// Finds the next elimination step: an equation affine in one unsolved
/// unknown whose coefficient is free of unknowns. Steps whose solved value
/// is itself unknown-free are preferred over pending ones.
fn find_step(
    remaining: &[Expr],
    unsolved: &[Symbol],
    ground_only: bool,
) -> Option<(usize, Symbol, Expr, Option<Expr>)> {
    let mut pending_candidate: Option<(usize, Symbol, Expr, Option<Expr>)> = None;
    for (i, eq) in remaining.iter().enumerate() {
        for u in unsolved {
            if !eq.contains(u) {
                continue;
            }
            let coeff = differentiate(eq, u);
            if coeff.is_zero_const() || is_zero(&coeff) {
                continue;
            }
            if unsolved.iter().any(|w| coeff.contains(w)) {
                continue;
            }
            let mut zero_bind = BTreeMap::new();
            zero_bind.insert(u.clone(), Expr::zero());
            let residue = substitute(eq, &zero_bind);
            let rhs = collapse(&mk_div(mk_neg(residue), coeff.clone()));
            let divisor = if coeff.as_rational().is_some() {
                None
            } else {
                Some(drop_rational_coef(&coeff))
            };
            let ground = !unsolved.iter().any(|w| rhs.contains(w));
            if ground {
                return Some((i, u.clone(), rhs, divisor));
            }
            if !ground_only && pending_candidate.is_none() {
                pending_candidate = Some((i, u.clone(), rhs, divisor));
            }
        }
    }
    pending_candidate
}

#[cfg(test)]
mod tests {
    use super::super::normal::equivalent;
    use super::super::parse::parse_any;
    use super::*;

    fn sym(n: &str) -> Symbol {
        Symbol::new(n)
    }

    fn syms(names: &[&str]) -> Vec<Symbol> {
        names.iter().map(|n| sym(n)).collect()
    }

    #[test]
    fn ground_only_mode_refuses_forward_references() {
        // both equations need a forward reference to start, so the strict
        // driver must give up while the pending-capable one makes progress
        let eqs = vec![
            parse_any("y1-x1-u1*x2").unwrap(),
            parse_any("y2-x2-u1*x1").unwrap(),
        ];
        let unknowns = syms(&["x1", "x2", "u1"]);
        let strict = solve_triangular(&eqs, &unknowns);
        assert!(strict.solutions.is_empty());
        assert!(strict.pending.is_empty());
        assert_eq!(strict.residual.len(), 2);

        let loose = solve_cascade(&eqs, &unknowns);
        assert!(loose.pending.contains_key(&sym("x1")));
    }

    #[test]
    fn triangular_chain_resolves() {
        let eqs = vec![
            parse_any("y1-x1").unwrap(),
            parse_any("y2-x2-x1*u1").unwrap(),
        ];
        let out = solve_cascade(&eqs, &syms(&["x1", "x2"]));
        assert!(out.residual.is_empty());
        assert!(out.pending.is_empty());
        assert_eq!(out.solutions[&sym("x1")], parse_any("y1").unwrap());
        assert!(equivalent(&out.solutions[&sym("x2")], &parse_any("y2-y1*u1").unwrap()));
    }

    #[test]
    fn pending_definitions_promote() {
        let eqs = vec![parse_any("a-b-1").unwrap(), parse_any("b-2").unwrap()];
        let out = solve_cascade(&eqs, &syms(&["a", "b"]));
        assert_eq!(out.solutions[&sym("a")], Expr::int(3));
        assert_eq!(out.solutions[&sym("b")], Expr::int(2));
    }

    #[test]
    fn coefficient_becomes_known_after_first_solve() {
        // x1 appears with coefficient (x3+1); x3 must resolve first
        let eqs = vec![
            parse_any("y2-x3").unwrap(),
            parse_any("y1-x1*(x3+1)").unwrap(),
        ];
        let out = solve_cascade(&eqs, &syms(&["x1", "x3"]));
        assert!(out.residual.is_empty());
        assert_eq!(out.solutions[&sym("x3")], parse_any("y2").unwrap());
        assert!(equivalent(&out.solutions[&sym("x1")], &parse_any("y1/(y2+1)").unwrap()));
        assert!(out.assumptions.iter().any(|a| equivalent(a, &parse_any("y2+1").unwrap())));
    }

    #[test]
    fn underdetermined_unknowns_stay_pending() {
        let eqs = vec![parse_any("a-b").unwrap()];
        let out = solve_cascade(&eqs, &syms(&["a", "b"]));
        assert!(out.solutions.is_empty());
        assert_eq!(out.pending[&sym("a")], parse_any("b").unwrap());
    }

    #[test]
    fn inconsistent_leftovers_stay_in_residual() {
        let eqs = vec![parse_any("a-1").unwrap(), parse_any("a-2").unwrap()];
        let out = solve_cascade(&eqs, &syms(&["a"]));
        assert_eq!(out.solutions[&sym("a")], Expr::one());
        assert_eq!(out.residual.len(), 1);
        assert!(!is_zero(&out.residual[0]));
    }

    #[test]
    fn nonlinear_occurrences_are_skipped() {
        // a is solvable from the second equation only; sin(a) blocks the first
        let eqs = vec![parse_any("sin(a)-q").unwrap(), parse_any("a-3").unwrap()];
        let out = solve_cascade(&eqs, &syms(&["a"]));
        assert_eq!(out.solutions[&sym("a")], Expr::int(3));
        assert_eq!(out.residual.len(), 1);
    }
}
