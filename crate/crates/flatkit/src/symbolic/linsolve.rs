//! Linear solving over the field of canonical expressions.
//!
//! Equations must be affine in the unknowns; coefficients may be arbitrary
//! expressions in other symbols. Elimination is Gauss-Jordan with a pivot
//! preference for nonzero rational constants, then for symbolic entries whose
//! numeric value at a supplied reference point is farthest from zero. Pivot
//! nonvanishing assumptions on symbolic pivots are reported to the caller.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::BigRational;
use num_traits::Signed;

use super::calculus::{differentiate, evaluate, substitute, Value};
use super::expr::{mk_add, mk_div, mk_mul, mk_neg, Expr, Symbol};
use super::normal::is_zero;

#[derive(Clone, Debug, PartialEq)]
pub enum LinearSolution {
    Unique(BTreeMap<Symbol, Expr>),
    /// Affine solution set: any particular solution plus the span of the
    /// basis vectors, each aligned with the unknown order given by the caller.
    NonUnique { particular: BTreeMap<Symbol, Expr>, basis: Vec<Vec<Expr>> },
    NoSolution,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NotAffine {
    pub unknown: Symbol,
}

impl fmt::Display for NotAffine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "equation system is not affine in unknown `{}`", self.unknown)
    }
}

impl std::error::Error for NotAffine {}

#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub solution: LinearSolution,
    /// Symbolic pivots assumed nonzero during elimination.
    pub assumptions: Vec<Expr>,
}

/// Solves `equations = 0` for `unknowns` by exact elimination.
///
/// `reference` is an optional numeric point used only to score symbolic
/// pivot candidates; it never affects correctness, only pivot order.
pub fn solve_linear_symbolic(
    equations: &[Expr],
    unknowns: &[Symbol],
    reference: Option<&BTreeMap<Symbol, Value>>,
) -> Result<SolveOutput, NotAffine> {
    let n = unknowns.len();
    // extract rows: coefficients per unknown and the constant part
    let mut rows: Vec<(Vec<Expr>, Expr)> = Vec::new();
    let zero_binds: BTreeMap<Symbol, Expr> =
        unknowns.iter().map(|s| (s.clone(), Expr::zero())).collect();
    for eq in equations {
        let mut coeffs = Vec::with_capacity(n);
        for u in unknowns {
            let c = differentiate(eq, u);
            if unknowns.iter().any(|w| c.contains(w)) {
                return Err(NotAffine { unknown: u.clone() });
            }
            coeffs.push(c);
        }
        let constant = substitute(eq, &zero_binds);
        // rhs of coeffs·z = -constant
        rows.push((coeffs, mk_neg(constant)));
    }

    let mut assumptions: Vec<Expr> = Vec::new();
    let mut pivot_of_col: Vec<Option<usize>> = vec![None; n];
    let mut used_rows: Vec<bool> = vec![false; rows.len()];

    for col in 0..n {
        let mut best: Option<(usize, u8, f64)> = None;
        for (r, (coeffs, _)) in rows.iter().enumerate() {
            if used_rows[r] {
                continue;
            }
            let entry = &coeffs[col];
            if entry.is_zero_const() {
                continue;
            }
            let (tier, score) = match entry.as_rational() {
                Some(q) => (0u8, rational_abs_f64(q)),
                None => {
                    if is_zero(entry) {
                        continue;
                    }
                    let score = reference
                        .and_then(|p| evaluate(entry, p).ok())
                        .map(f64::abs)
                        .unwrap_or(0.0);
                    (1u8, score)
                }
            };
            let better = match &best {
                None => true,
                Some((_, bt, bs)) => tier < *bt || (tier == *bt && score > *bs),
            };
            if better {
                best = Some((r, tier, score));
            }
        }
        let Some((prow, tier, _)) = best else {
            continue;
        };
        let pivot = rows[prow].0[col].clone();
        if tier == 1 {
            let witness = super::expr::drop_rational_coef(&pivot);
            if !assumptions.contains(&witness) {
                assumptions.push(witness);
            }
        }
        // normalize the pivot row
        for c in 0..n {
            rows[prow].0[c] = mk_div(rows[prow].0[c].clone(), pivot.clone());
        }
        rows[prow].1 = mk_div(rows[prow].1.clone(), pivot.clone());
        // eliminate the column everywhere else
        for r in 0..rows.len() {
            if r == prow {
                continue;
            }
            let factor = rows[r].0[col].clone();
            if factor.is_zero_const() {
                continue;
            }
            for c in 0..n {
                let delta = mk_mul(vec![factor.clone(), rows[prow].0[c].clone()]);
                rows[r].0[c] = mk_add(vec![rows[r].0[c].clone(), mk_neg(delta)]);
            }
            let delta = mk_mul(vec![factor, rows[prow].1.clone()]);
            rows[r].1 = mk_add(vec![rows[r].1.clone(), mk_neg(delta)]);
        }
        used_rows[prow] = true;
        pivot_of_col[col] = Some(prow);
    }

    // unused rows must have vanished entirely, otherwise the system is
    // inconsistent
    for (r, (coeffs, rhs)) in rows.iter().enumerate() {
        if used_rows[r] {
            continue;
        }
        let all_zero = coeffs.iter().all(is_zero);
        if all_zero && !is_zero(rhs) {
            return Ok(SolveOutput { solution: LinearSolution::NoSolution, assumptions });
        }
        // rows with surviving coefficients were handled by some pivot column
        // and carry no extra constraint
    }

    let free_cols: Vec<usize> = (0..n).filter(|c| pivot_of_col[*c].is_none()).collect();
    if free_cols.is_empty() {
        let mut sol = BTreeMap::new();
        for (col, u) in unknowns.iter().enumerate() {
            let row = pivot_of_col[col].unwrap();
            sol.insert(u.clone(), rows[row].1.clone());
        }
        return Ok(SolveOutput { solution: LinearSolution::Unique(sol), assumptions });
    }

    let mut particular = BTreeMap::new();
    for (col, u) in unknowns.iter().enumerate() {
        match pivot_of_col[col] {
            Some(row) => {
                particular.insert(u.clone(), rows[row].1.clone());
            }
            None => {
                particular.insert(u.clone(), Expr::zero());
            }
        }
    }
    let mut basis = Vec::with_capacity(free_cols.len());
    for &fc in &free_cols {
        let mut vec_out = vec![Expr::zero(); n];
        vec_out[fc] = Expr::one();
        for (col, slot) in pivot_of_col.iter().enumerate() {
            if let Some(row) = slot {
                vec_out[col] = mk_neg(rows[*row].0[fc].clone());
            }
        }
        basis.push(vec_out);
    }
    Ok(SolveOutput {
        solution: LinearSolution::NonUnique { particular, basis },
        assumptions,
    })
}

fn rational_abs_f64(q: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    q.abs().to_f64().unwrap_or(f64::MAX)
}

#[cfg(test)]
mod tests {
    use super::super::parse::parse_any;
    use super::*;

    fn sym(n: &str) -> Symbol {
        Symbol::new(n)
    }

    #[test]
    fn one_equation_two_unknowns_gives_null_space_basis() {
        let eqs = vec![parse_any("c1+2*c2").unwrap()];
        let unknowns = vec![sym("c1"), sym("c2")];
        let out = solve_linear_symbolic(&eqs, &unknowns, None).unwrap();
        match out.solution {
            LinearSolution::NonUnique { particular, basis } => {
                assert!(particular.values().all(|e| e.is_zero_const()));
                assert_eq!(basis, vec![vec![Expr::int(-2), Expr::one()]]);
            }
            other => panic!("expected non-unique solution, got {other:?}"),
        }
        assert!(out.assumptions.is_empty());
    }

    #[test]
    fn independent_equations_give_unique_zero() {
        let eqs = vec![parse_any("c1").unwrap(), parse_any("c2").unwrap()];
        let unknowns = vec![sym("c1"), sym("c2")];
        let out = solve_linear_symbolic(&eqs, &unknowns, None).unwrap();
        match out.solution {
            LinearSolution::Unique(sol) => {
                assert!(sol.values().all(|e| e.is_zero_const()));
            }
            other => panic!("expected unique solution, got {other:?}"),
        }
    }

    #[test]
    fn symbolic_coefficients_eliminate_to_unique_zero() {
        let eqs = vec![parse_any("c1*xi1+c2*xi1").unwrap(), parse_any("c1-c2").unwrap()];
        let unknowns = vec![sym("c1"), sym("c2")];
        let out = solve_linear_symbolic(&eqs, &unknowns, None).unwrap();
        match out.solution {
            LinearSolution::Unique(sol) => {
                assert!(sol.values().all(|e| e.is_zero_const()));
            }
            other => panic!("expected unique solution, got {other:?}"),
        }
        // the symbolic pivot xi1 was divided through
        assert!(!out.assumptions.is_empty());
    }

    #[test]
    fn inconsistent_system_reports_no_solution() {
        let eqs = vec![parse_any("c1+c2").unwrap(), parse_any("c1+c2-1").unwrap()];
        let unknowns = vec![sym("c1"), sym("c2")];
        let out = solve_linear_symbolic(&eqs, &unknowns, None).unwrap();
        assert_eq!(out.solution, LinearSolution::NoSolution);
    }

    #[test]
    fn nonlinear_dependence_is_rejected() {
        let eqs = vec![parse_any("c1*c2-1").unwrap()];
        let unknowns = vec![sym("c1"), sym("c2")];
        assert!(solve_linear_symbolic(&eqs, &unknowns, None).is_err());
    }

    #[test]
    fn solutions_substitute_back_to_zero() {
        let eqs = vec![
            parse_any("c1+c2+c3-6").unwrap(),
            parse_any("c1-c2").unwrap(),
            parse_any("c2-c3+1").unwrap(),
        ];
        let unknowns = vec![sym("c1"), sym("c2"), sym("c3")];
        let out = solve_linear_symbolic(&eqs, &unknowns, None).unwrap();
        let LinearSolution::Unique(sol) = out.solution else {
            panic!("expected unique solution");
        };
        for eq in &eqs {
            let back = substitute(eq, &sol);
            assert!(is_zero(&back), "residual {back}");
        }
    }

    #[test]
    fn affine_system_with_symbolic_rhs() {
        // c1 + c2 = a, c1 - c2 = b  =>  c1 = (a+b)/2, c2 = (a-b)/2
        let eqs = vec![parse_any("c1+c2-a").unwrap(), parse_any("c1-c2-b").unwrap()];
        let unknowns = vec![sym("c1"), sym("c2")];
        let out = solve_linear_symbolic(&eqs, &unknowns, None).unwrap();
        let LinearSolution::Unique(sol) = out.solution else {
            panic!("expected unique solution");
        };
        use super::super::normal::equivalent;
        assert!(equivalent(&sol[&sym("c1")], &parse_any("(a+b)/2").unwrap()));
        assert!(equivalent(&sol[&sym("c2")], &parse_any("(a-b)/2").unwrap()));
    }
}
