//! Floating-point machinery for the numeric certificate: damped
//! Gauss-Newton on the stacked jet equations and rank computations with a
//! relative tolerance.

use std::collections::BTreeMap;

use crate::symbolic::calculus::{evaluate, Value};
use crate::symbolic::expr::{Expr, Symbol};

pub const RESIDUAL_TOL: f64 = 1e-9;
pub const CONVERGENCE_TOL: f64 = 1e-12;
pub const MAX_ITERS: usize = 100;
pub const MAX_HALVINGS: usize = 30;

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub solution: Vec<f64>,
    pub residual: f64,
    pub converged: bool,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Residual vector at a point; `None` when evaluation leaves the domain.
fn eval_residual(
    eqs: &[Expr],
    unknowns: &[Symbol],
    knowns: &BTreeMap<Symbol, Value>,
    x: &[f64],
) -> Option<Vec<f64>> {
    let mut point = knowns.clone();
    for (s, v) in unknowns.iter().zip(x) {
        point.insert(s.clone(), Value::Float(*v));
    }
    let mut out = Vec::with_capacity(eqs.len());
    for e in eqs {
        match evaluate(e, &point) {
            Ok(v) if v.is_finite() => out.push(v),
            _ => return None,
        }
    }
    Some(out)
}

/// Evaluates a symbolic matrix entrywise at the current iterate.
pub fn eval_matrix(
    rows: &[Vec<Expr>],
    unknowns: &[Symbol],
    knowns: &BTreeMap<Symbol, Value>,
    x: &[f64],
) -> Option<Vec<Vec<f64>>> {
    let mut point = knowns.clone();
    for (s, v) in unknowns.iter().zip(x) {
        point.insert(s.clone(), Value::Float(*v));
    }
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let mut r = Vec::with_capacity(row.len());
        for e in row {
            match evaluate(e, &point) {
                Ok(v) if v.is_finite() => r.push(v),
                _ => return None,
            }
        }
        out.push(r);
    }
    Some(out)
}

/// Numerical rank by Gaussian elimination with partial pivoting and a
/// tolerance relative to the largest entry.
pub fn numeric_rank(mat: &[Vec<f64>]) -> usize {
    let rows = mat.len();
    let cols = mat.first().map(|r| r.len()).unwrap_or(0);
    if rows == 0 || cols == 0 {
        return 0;
    }
    let mut a: Vec<Vec<f64>> = mat.to_vec();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |acc, x| acc.max(x.abs()))
        .max(1.0);
    let tol = scale * 1e-8;
    let mut rank = 0;
    let mut col = 0;
    while rank < rows && col < cols {
        let mut pivot = rank;
        for r in rank + 1..rows {
            if a[r][col].abs() > a[pivot][col].abs() {
                pivot = r;
            }
        }
        if a[pivot][col].abs() <= tol {
            col += 1;
            continue;
        }
        a.swap(rank, pivot);
        for r in rank + 1..rows {
            let f = a[r][col] / a[rank][col];
            for c in col..cols {
                a[r][c] -= f * a[rank][c];
            }
        }
        rank += 1;
        col += 1;
    }
    rank
}

/// Solves the square system `a * x = b` by Gaussian elimination; `None`
/// when the matrix is numerically singular.
fn solve_square(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let n = a.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |acc, x| acc.max(x.abs()))
        .max(1.0);
    let tol = scale * 1e-14;
    for k in 0..n {
        let mut pivot = k;
        for r in k + 1..n {
            if a[r][k].abs() > a[pivot][k].abs() {
                pivot = r;
            }
        }
        if a[pivot][k].abs() <= tol {
            return None;
        }
        a.swap(k, pivot);
        b.swap(k, pivot);
        for r in k + 1..n {
            let f = a[r][k] / a[k][k];
            for c in k..n {
                a[r][c] -= f * a[k][c];
            }
            b[r] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for c in k + 1..n {
            s -= a[k][c] * x[c];
        }
        x[k] = s / a[k][k];
    }
    Some(x)
}

/// Minimum-norm solution of the (generally underdetermined) linear system
/// J d = r via the normal equations J Jᵀ y = r, d = Jᵀ y, with a small
/// ridge to survive mild rank deficiency.
fn least_norm_step(j: &[Vec<f64>], r: &[f64]) -> Option<Vec<f64>> {
    let rows = j.len();
    let cols = j.first().map(|row| row.len()).unwrap_or(0);
    if rows == 0 || cols == 0 {
        return None;
    }
    let mut gram = vec![vec![0.0; rows]; rows];
    let mut diag_max = 0.0f64;
    for i in 0..rows {
        for k in i..rows {
            let mut s = 0.0;
            for c in 0..cols {
                s += j[i][c] * j[k][c];
            }
            gram[i][k] = s;
            gram[k][i] = s;
        }
        diag_max = diag_max.max(gram[i][i]);
    }
    let ridge = diag_max.max(1.0) * 1e-12;
    for i in 0..rows {
        gram[i][i] += ridge;
    }
    let mut rhs = r.to_vec();
    let y = solve_square(&mut gram, &mut rhs)?;
    let mut d = vec![0.0; cols];
    for c in 0..cols {
        for i in 0..rows {
            d[c] += j[i][c] * y[i];
        }
    }
    Some(d)
}

/// Damped Gauss-Newton iteration on the residual equations.
pub fn gauss_newton(
    eqs: &[Expr],
    jac: &[Vec<Expr>],
    unknowns: &[Symbol],
    knowns: &BTreeMap<Symbol, Value>,
    start: &[f64],
) -> NewtonOutcome {
    let mut x = start.to_vec();
    let mut res = match eval_residual(eqs, unknowns, knowns, &x) {
        Some(r) => r,
        None => return NewtonOutcome { solution: x, residual: f64::INFINITY, converged: false },
    };
    let mut norm = norm2(&res);
    for _ in 0..MAX_ITERS {
        if norm <= CONVERGENCE_TOL {
            break;
        }
        let j = match eval_matrix(jac, unknowns, knowns, &x) {
            Some(j) => j,
            None => break,
        };
        let step = match least_norm_step(&j, &res) {
            Some(d) => d,
            None => break,
        };
        let mut t = 1.0;
        let mut advanced = false;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(xi, di)| xi - t * di).collect();
            if let Some(r_trial) = eval_residual(eqs, unknowns, knowns, &trial) {
                let n_trial = norm2(&r_trial);
                if n_trial < norm {
                    x = trial;
                    res = r_trial;
                    norm = n_trial;
                    advanced = true;
                    break;
                }
            }
            t /= 2.0;
        }
        if !advanced {
            break;
        }
    }
    NewtonOutcome { solution: x, residual: norm, converged: norm <= RESIDUAL_TOL }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::parse::parse_any;

    fn sym(n: &str) -> Symbol {
        Symbol::new(n)
    }

    #[test]
    fn rank_detects_a_dependent_row() {
        let m = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![0.0, 1.0]];
        assert_eq!(numeric_rank(&m), 2);
    }

    #[test]
    fn rank_of_zero_matrix_is_zero() {
        assert_eq!(numeric_rank(&[vec![0.0, 0.0]]), 0);
    }

    #[test]
    fn newton_solves_an_underdetermined_quadratic() {
        // a^2 + b - 5 = 0 with two unknowns: converges to some solution
        let eqs = vec![parse_any("a^2+b-5").unwrap()];
        let unknowns = [sym("a"), sym("b")];
        let jac = vec![vec![parse_any("2*a").unwrap(), Expr::one()]];
        let out = gauss_newton(&eqs, &jac, &unknowns, &BTreeMap::new(), &[1.0, 1.0]);
        assert!(out.converged, "residual {}", out.residual);
        let (a, b) = (out.solution[0], out.solution[1]);
        assert!((a * a + b - 5.0).abs() < 1e-9);
    }

    #[test]
    fn newton_handles_trigonometric_equations() {
        let eqs = vec![parse_any("sin(a)-1/2").unwrap()];
        let unknowns = [sym("a")];
        let jac = vec![vec![parse_any("cos(a)").unwrap()]];
        let out = gauss_newton(&eqs, &jac, &unknowns, &BTreeMap::new(), &[0.3]);
        assert!(out.converged);
        assert!((out.solution[0].sin() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn newton_reports_failure_on_an_infeasible_system() {
        // a^2 + 1 = 0 has no real solution
        let eqs = vec![parse_any("a^2+1").unwrap()];
        let unknowns = [sym("a")];
        let jac = vec![vec![parse_any("2*a").unwrap()]];
        let out = gauss_newton(&eqs, &jac, &unknowns, &BTreeMap::new(), &[0.7]);
        assert!(!out.converged);
    }
}
