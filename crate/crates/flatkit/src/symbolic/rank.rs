//! Generic rank of symbolic matrices via seeded random rational sampling.
//!
//! Entries are evaluated at random rational points near a reference point.
//! When every entry folds to an exact rational the rank is computed over the
//! rationals; otherwise the trial falls back to floating point with a scaled
//! tolerance. The reported rank is the maximum over trials, which equals the
//! generic rank with probability 1 under the sampling model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::calculus::{eval_exact_rational, evaluate, ExactEvalFail, Value};
use super::expr::{Expr, Symbol};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RankError {
    /// Every sample point hit a singularity of some entry.
    AllSamplesSingular { trials: usize },
}

impl fmt::Display for RankError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankError::AllSamplesSingular { trials } => {
                write!(f, "all {trials} sample points hit singularities")
            }
        }
    }
}

impl std::error::Error for RankError {}

/// Seeded source of rational sample points around a base point.
pub struct Sampler {
    rng: ChaCha8Rng,
    base: BTreeMap<Symbol, BigRational>,
}

impl Sampler {
    pub fn new(base: BTreeMap<Symbol, BigRational>, seed: u64) -> Self {
        Sampler { rng: ChaCha8Rng::seed_from_u64(seed), base }
    }

    /// One random rational offset from {p/q : |p| <= 20, 1 <= q <= 20}.
    pub fn offset(&mut self) -> BigRational {
        let p: i64 = self.rng.gen_range(-20..=20);
        let q: i64 = self.rng.gen_range(1..=20);
        BigRational::new(p.into(), q.into())
    }

    /// A full point: base values with random offsets added on `vars`;
    /// symbols outside `vars` keep their base value exactly.
    pub fn point(&mut self, vars: &[Symbol]) -> BTreeMap<Symbol, BigRational> {
        let mut point = self.base.clone();
        for v in vars {
            let b = point.get(v).cloned().unwrap_or_else(BigRational::zero);
            point.insert(v.clone(), b + self.offset());
        }
        point
    }
}

/// Maximum rank of `matrix` over `trials` random rational points near the
/// base point; deterministic for a fixed seed. Every symbol appearing in an
/// entry is perturbed, not just the listed ones: a parameter pinned exactly
/// at the base can sit on a singularity of the entries even though the
/// matrix is perfectly regular nearby.
pub fn generic_rank(
    matrix: &[Vec<Expr>],
    vars: &[Symbol],
    base: &BTreeMap<Symbol, BigRational>,
    trials: usize,
    seed: u64,
) -> Result<usize, RankError> {
    let rows = matrix.len();
    let cols = matrix.first().map(|r| r.len()).unwrap_or(0);
    if rows == 0 || cols == 0 {
        return Ok(0);
    }
    let mut all_vars: Vec<Symbol> = vars.to_vec();
    let mut seen: BTreeSet<Symbol> = vars.iter().cloned().collect();
    for e in matrix.iter().flatten() {
        for s in e.free_vars() {
            if seen.insert(s.clone()) {
                all_vars.push(s);
            }
        }
    }
    let mut sampler = Sampler::new(base.clone(), seed);
    let mut best: Option<usize> = None;
    let max_rank = rows.min(cols);
    for _ in 0..trials.max(1) {
        let point = sampler.point(&all_vars);
        if let Some(rank) = rank_at_point(matrix, &point) {
            best = Some(best.map_or(rank, |b| b.max(rank)));
            if best == Some(max_rank) {
                break;
            }
        }
    }
    best.ok_or(RankError::AllSamplesSingular { trials: trials.max(1) })
}

fn rank_at_point(matrix: &[Vec<Expr>], point: &BTreeMap<Symbol, BigRational>) -> Option<usize> {
    let mut exact: Vec<Vec<BigRational>> = Vec::with_capacity(matrix.len());
    let mut all_exact = true;
    'outer: for row in matrix {
        let mut out = Vec::with_capacity(row.len());
        for e in row {
            match eval_exact_rational(e, point) {
                Ok(v) => out.push(v),
                Err(ExactEvalFail::NonRational) => {
                    all_exact = false;
                    break 'outer;
                }
                Err(_) => return None,
            }
        }
        exact.push(out);
    }
    if all_exact {
        return Some(rational_rank(exact));
    }
    // float fallback for matrices with transcendental entries
    let vals: BTreeMap<Symbol, Value> = point
        .iter()
        .map(|(k, v)| (k.clone(), Value::Rational(v.clone())))
        .collect();
    let mut m: Vec<Vec<f64>> = Vec::with_capacity(matrix.len());
    for row in matrix {
        let mut out = Vec::with_capacity(row.len());
        for e in row {
            match evaluate(e, &vals) {
                Ok(x) if x.is_finite() => out.push(x),
                _ => return None,
            }
        }
        m.push(out);
    }
    Some(float_rank(m))
}

fn rational_rank(mut m: Vec<Vec<BigRational>>) -> usize {
    let rows = m.len();
    let cols = m.first().map(|r| r.len()).unwrap_or(0);
    let mut rank = 0;
    let mut row = 0;
    for col in 0..cols {
        let Some(p) = (row..rows).find(|r| !m[*r][col].is_zero()) else {
            continue;
        };
        m.swap(row, p);
        let pivot = m[row][col].clone();
        for r in 0..rows {
            if r == row || m[r][col].is_zero() {
                continue;
            }
            let factor = m[r][col].clone() / pivot.clone();
            for c in col..cols {
                let sub = factor.clone() * m[row][c].clone();
                m[r][c] -= sub;
            }
        }
        rank += 1;
        row += 1;
        if row == rows {
            break;
        }
    }
    rank
}

fn float_rank(mut m: Vec<Vec<f64>>) -> usize {
    let rows = m.len();
    let cols = m.first().map(|r| r.len()).unwrap_or(0);
    let scale = m
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |a, b| a.max(b.abs()));
    let tol = 1e-9 * scale.max(1.0);
    let mut rank = 0;
    let mut row = 0;
    for col in 0..cols {
        let mut best = row;
        for r in row..rows {
            if m[r][col].abs() > m[best][col].abs() {
                best = r;
            }
        }
        if row >= rows || m[best][col].abs() <= tol {
            continue;
        }
        m.swap(row, best);
        let pivot = m[row][col];
        for r in 0..rows {
            if r == row {
                continue;
            }
            let factor = m[r][col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for c in col..cols {
                m[r][c] -= factor * m[row][c];
            }
        }
        rank += 1;
        row += 1;
        if row == rows {
            break;
        }
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::super::calculus::differentiate;
    use super::super::parse::parse_any;
    use super::*;

    fn sym(n: &str) -> Symbol {
        Symbol::new(n)
    }

    fn jac(exprs: &[Expr], vars: &[Symbol]) -> Vec<Vec<Expr>> {
        exprs
            .iter()
            .map(|e| vars.iter().map(|v| differentiate(e, v)).collect())
            .collect()
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let m = vec![vec![Expr::zero(), Expr::zero()], vec![Expr::zero(), Expr::zero()]];
        assert_eq!(generic_rank(&m, &[], &BTreeMap::new(), 4, 7).unwrap(), 0);
    }

    #[test]
    fn input_jacobian_of_benchmark_system_has_full_rank() {
        let f = [
            parse_any("(x2+x3+3*x4)/(u1+2*u2+1)").unwrap(),
            parse_any("x1*(x3+1)*(u1+2*u2-3)").unwrap(),
            parse_any("u1+2*u2").unwrap(),
            parse_any("x1*(x3+1)+u2").unwrap(),
        ];
        let vars = [sym("u1"), sym("u2")];
        let m = jac(&f, &vars);
        let all: Vec<Symbol> = ["x1", "x2", "x3", "x4", "u1", "u2"].iter().map(|s| sym(s)).collect();
        let base: BTreeMap<Symbol, BigRational> =
            all.iter().map(|s| (s.clone(), BigRational::zero())).collect();
        assert_eq!(generic_rank(&m, &all, &base, 8, 42).unwrap(), 2);
    }

    #[test]
    fn scalar_map_rank_deficiency_is_detected() {
        let f = [parse_any("x2+x3").unwrap()];
        let vars = [sym("x2"), sym("x3")];
        let m = jac(&f, &vars);
        let base: BTreeMap<Symbol, BigRational> =
            vars.iter().map(|s| (s.clone(), BigRational::zero())).collect();
        assert_eq!(generic_rank(&m, &vars, &base, 8, 42).unwrap(), 1);
    }

    #[test]
    fn transcendental_entries_use_float_fallback() {
        let m = vec![
            vec![parse_any("sin(t)").unwrap(), parse_any("cos(t)").unwrap()],
            vec![parse_any("cos(t)").unwrap(), parse_any("-sin(t)").unwrap()],
        ];
        let vars = [sym("t")];
        let base: BTreeMap<Symbol, BigRational> =
            vars.iter().map(|s| (s.clone(), BigRational::zero())).collect();
        // determinant is -(sin^2+cos^2) = -1, so rank 2 everywhere
        assert_eq!(generic_rank(&m, &vars, &base, 4, 3).unwrap(), 2);
    }

    #[test]
    fn rank_is_deterministic_for_fixed_seed() {
        let m = vec![
            vec![parse_any("x").unwrap(), parse_any("x^2").unwrap()],
            vec![parse_any("x^2").unwrap(), parse_any("x^3").unwrap()],
        ];
        let vars = [sym("x")];
        let base: BTreeMap<Symbol, BigRational> =
            vars.iter().map(|s| (s.clone(), BigRational::zero())).collect();
        let a = generic_rank(&m, &vars, &base, 6, 11).unwrap();
        let b = generic_rank(&m, &vars, &base, 6, 11).unwrap();
        assert_eq!(a, b);
        // rows are proportional, so the generic rank is 1
        assert_eq!(a, 1);
    }

    #[test]
    fn symbols_outside_vars_are_perturbed_off_their_singular_base() {
        // the entry is regular generically but undefined exactly at b = 0
        let m = vec![vec![parse_any("a/b").unwrap()]];
        let vars = [sym("a")];
        let base: BTreeMap<Symbol, BigRational> =
            [(sym("a"), BigRational::zero()), (sym("b"), BigRational::zero())].into();
        assert_eq!(generic_rank(&m, &vars, &base, 8, 42).unwrap(), 1);
    }

    #[test]
    fn singular_only_matrix_reports_error() {
        // the lone entry is 1/x evaluated where the denominator pattern
        // can never be folded: force failure by binding nothing
        let m = vec![vec![parse_any("1/(x-x)").unwrap()]];
        let base: BTreeMap<Symbol, BigRational> = BTreeMap::new();
        match generic_rank(&m, &[sym("x")], &base, 3, 5) {
            Err(RankError::AllSamplesSingular { trials }) => assert_eq!(trials, 3),
            other => panic!("expected singular error, got {other:?}"),
        }
    }
}
