//! Differentiation, substitution, and evaluation.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::BigRational;
use num_traits::{Pow, Signed, ToPrimitive, Zero};

use super::expr::{mk_add, mk_apply, mk_div, mk_mul, mk_neg, mk_pow, Expr, Func, Symbol};

/// Canonical partial derivative with respect to `v`.
pub fn differentiate(e: &Expr, v: &Symbol) -> Expr {
    match e {
        Expr::Num(_) => Expr::zero(),
        Expr::Var(s) => {
            if s == v {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Expr::Add(ts) => mk_add(ts.iter().map(|t| differentiate(t, v)).collect()),
        Expr::Mul(fs) => {
            let mut terms = Vec::with_capacity(fs.len());
            for i in 0..fs.len() {
                let di = differentiate(&fs[i], v);
                if di.is_zero_const() {
                    continue;
                }
                let mut prod: Vec<Expr> = Vec::with_capacity(fs.len());
                for (j, f) in fs.iter().enumerate() {
                    prod.push(if i == j { di.clone() } else { f.clone() });
                }
                terms.push(mk_mul(prod));
            }
            mk_add(terms)
        }
        Expr::Pow(b, k) => {
            let db = differentiate(b, v);
            if db.is_zero_const() {
                return Expr::zero();
            }
            mk_mul(vec![Expr::int(*k as i64), mk_pow(b.as_ref().clone(), k - 1), db])
        }
        Expr::Div(n, d) => {
            let dn = differentiate(n, v);
            let dd = differentiate(d, v);
            let num = mk_add(vec![
                mk_mul(vec![dn, d.as_ref().clone()]),
                mk_neg(mk_mul(vec![n.as_ref().clone(), dd])),
            ]);
            mk_div(num, mk_pow(d.as_ref().clone(), 2))
        }
        Expr::Neg(inner) => mk_neg(differentiate(inner, v)),
        Expr::Apply(f, a) => {
            let da = differentiate(a, v);
            if da.is_zero_const() {
                return Expr::zero();
            }
            let arg = a.as_ref().clone();
            let outer = match f {
                Func::Sin => mk_apply(Func::Cos, arg),
                Func::Cos => mk_neg(mk_apply(Func::Sin, arg)),
                Func::Tan => mk_div(Expr::one(), mk_pow(mk_apply(Func::Cos, arg), 2)),
                Func::Exp => mk_apply(Func::Exp, arg),
                Func::Log => mk_div(Expr::one(), arg),
                Func::Sqrt => mk_div(Expr::one(), mk_mul(vec![Expr::int(2), mk_apply(Func::Sqrt, arg)])),
            };
            mk_mul(vec![outer, da])
        }
    }
}

/// Simultaneous substitution followed by canonicalization.
pub fn substitute(e: &Expr, bindings: &BTreeMap<Symbol, Expr>) -> Expr {
    match e {
        Expr::Num(_) => e.clone(),
        Expr::Var(s) => bindings.get(s).cloned().unwrap_or_else(|| e.clone()),
        Expr::Apply(f, a) => mk_apply(*f, substitute(a, bindings)),
        Expr::Pow(b, k) => mk_pow(substitute(b, bindings), *k),
        Expr::Mul(fs) => mk_mul(fs.iter().map(|f| substitute(f, bindings)).collect()),
        Expr::Add(ts) => mk_add(ts.iter().map(|t| substitute(t, bindings)).collect()),
        Expr::Div(n, d) => mk_div(substitute(n, bindings), substitute(d, bindings)),
        Expr::Neg(inner) => mk_neg(substitute(inner, bindings)),
    }
}

/// A point coordinate: exact rational or floating.
#[derive(Clone, Debug)]
pub enum Value {
    Rational(BigRational),
    Float(f64),
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Float(x)
    }
}

impl From<BigRational> for Value {
    fn from(r: BigRational) -> Self {
        Value::Rational(r)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EvalError {
    DivisionByZero(Expr),
    DomainError(Expr),
    Unbound(Symbol),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::DivisionByZero(e) => write!(f, "division by zero in `{e}`"),
            EvalError::DomainError(e) => write!(f, "domain error in `{e}`"),
            EvalError::Unbound(s) => write!(f, "unbound symbol `{s}`"),
        }
    }
}

impl std::error::Error for EvalError {}

enum Num {
    R(BigRational),
    F(f64),
}

impl Num {
    fn to_f64(&self) -> f64 {
        match self {
            Num::R(r) => r.to_f64().unwrap_or(f64::NAN),
            Num::F(x) => *x,
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            Num::R(r) => r.is_zero(),
            Num::F(x) => *x == 0.0,
        }
    }
}

/// Evaluates to an IEEE double, folding exact rational subexpressions
/// exactly before any float arithmetic happens.
pub fn evaluate(e: &Expr, point: &BTreeMap<Symbol, Value>) -> Result<f64, EvalError> {
    eval_num(e, point).map(|n| n.to_f64())
}

fn eval_num(e: &Expr, point: &BTreeMap<Symbol, Value>) -> Result<Num, EvalError> {
    match e {
        Expr::Num(r) => Ok(Num::R(r.clone())),
        Expr::Var(s) => match point.get(s) {
            Some(Value::Rational(r)) => Ok(Num::R(r.clone())),
            Some(Value::Float(x)) => Ok(Num::F(*x)),
            None => Err(EvalError::Unbound(s.clone())),
        },
        Expr::Add(ts) => {
            let mut acc = Num::R(BigRational::zero());
            for t in ts {
                let v = eval_num(t, point)?;
                acc = match (acc, v) {
                    (Num::R(a), Num::R(b)) => Num::R(a + b),
                    (a, b) => Num::F(a.to_f64() + b.to_f64()),
                };
            }
            Ok(acc)
        }
        Expr::Mul(fs) => {
            let mut acc = Num::R(BigRational::from_integer(1.into()));
            for f in fs {
                let v = eval_num(f, point)?;
                acc = match (acc, v) {
                    (Num::R(a), Num::R(b)) => Num::R(a * b),
                    (a, b) => Num::F(a.to_f64() * b.to_f64()),
                };
            }
            Ok(acc)
        }
        Expr::Pow(b, k) => {
            let v = eval_num(b, point)?;
            if v.is_zero() && *k < 0 {
                return Err(EvalError::DivisionByZero(e.clone()));
            }
            Ok(match v {
                Num::R(r) => Num::R(Pow::pow(r, *k)),
                Num::F(x) => Num::F(x.powi(*k)),
            })
        }
        Expr::Div(n, d) => {
            let dv = eval_num(d, point)?;
            if dv.is_zero() {
                return Err(EvalError::DivisionByZero(e.clone()));
            }
            let nv = eval_num(n, point)?;
            Ok(match (nv, dv) {
                (Num::R(a), Num::R(b)) => Num::R(a / b),
                (a, b) => Num::F(a.to_f64() / b.to_f64()),
            })
        }
        Expr::Neg(inner) => {
            let v = eval_num(inner, point)?;
            Ok(match v {
                Num::R(r) => Num::R(-r),
                Num::F(x) => Num::F(-x),
            })
        }
        Expr::Apply(f, a) => {
            let x = eval_num(a, point)?.to_f64();
            let y = match f {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Tan => x.tan(),
                Func::Exp => x.exp(),
                Func::Log => {
                    if x <= 0.0 {
                        return Err(EvalError::DomainError(e.clone()));
                    }
                    x.ln()
                }
                Func::Sqrt => {
                    if x < 0.0 {
                        return Err(EvalError::DomainError(e.clone()));
                    }
                    x.sqrt()
                }
            };
            Ok(Num::F(y))
        }
    }
}

/// Why an exact rational evaluation did not produce a number.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ExactEvalFail {
    /// A function application (or irrational sqrt) was hit.
    NonRational,
    /// A denominator vanished at the point.
    Singular,
    /// A free symbol had no binding.
    Unbound,
}

/// Exact evaluation over the rationals. Fails fast on any subexpression
/// that cannot be folded to a rational.
pub fn eval_exact_rational(
    e: &Expr,
    point: &BTreeMap<Symbol, BigRational>,
) -> Result<BigRational, ExactEvalFail> {
    match e {
        Expr::Num(r) => Ok(r.clone()),
        Expr::Var(s) => point.get(s).cloned().ok_or(ExactEvalFail::Unbound),
        Expr::Add(ts) => {
            let mut acc = BigRational::zero();
            for t in ts {
                acc += eval_exact_rational(t, point)?;
            }
            Ok(acc)
        }
        Expr::Mul(fs) => {
            let mut acc = BigRational::from_integer(1.into());
            for f in fs {
                acc *= eval_exact_rational(f, point)?;
            }
            Ok(acc)
        }
        Expr::Pow(b, k) => {
            let v = eval_exact_rational(b, point)?;
            if v.is_zero() && *k < 0 {
                return Err(ExactEvalFail::Singular);
            }
            Ok(Pow::pow(v, *k))
        }
        Expr::Div(n, d) => {
            let dv = eval_exact_rational(d, point)?;
            if dv.is_zero() {
                return Err(ExactEvalFail::Singular);
            }
            Ok(eval_exact_rational(n, point)? / dv)
        }
        Expr::Neg(inner) => Ok(-eval_exact_rational(inner, point)?),
        Expr::Apply(f, a) => {
            let v = eval_exact_rational(a, point)?;
            match f {
                Func::Sin | Func::Tan if v.is_zero() => Ok(BigRational::zero()),
                Func::Cos | Func::Exp if v.is_zero() => Ok(BigRational::from_integer(1.into())),
                Func::Sqrt if !v.is_negative() => {
                    let ns = v.numer().sqrt();
                    let ds = v.denom().sqrt();
                    if &ns * &ns == *v.numer() && &ds * &ds == *v.denom() {
                        Ok(BigRational::new(ns, ds))
                    } else {
                        Err(ExactEvalFail::NonRational)
                    }
                }
                _ => Err(ExactEvalFail::NonRational),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse::parse_any;
    use super::*;

    fn sym(n: &str) -> Symbol {
        Symbol::new(n)
    }

    fn at(pairs: &[(&str, f64)]) -> BTreeMap<Symbol, Value> {
        pairs.iter().map(|(n, v)| (sym(n), Value::Float(*v))).collect()
    }

    #[test]
    fn quotient_rule_matches_closed_form() {
        let e = parse_any("(x2+x3+3*x4)/(u1+2*u2+1)").unwrap();
        let d = differentiate(&e, &sym("u1"));
        let want = parse_any("-(x2+x3+3*x4)/(u1+2*u2+1)^2").unwrap();
        assert_eq!(d, want);
    }

    #[test]
    fn product_with_sum_derivative() {
        let e = parse_any("x1*(x3+1)").unwrap();
        assert_eq!(differentiate(&e, &sym("x3")), Expr::symbol("x1"));
    }

    #[test]
    fn three_factor_product_derivative() {
        let e = parse_any("x1*(x3+1)*(u1+2*u2-3)").unwrap();
        let d = differentiate(&e, &sym("u2"));
        assert_eq!(d, parse_any("2*x1*(x3+1)").unwrap());
    }

    #[test]
    fn derivative_of_absent_symbol_is_zero() {
        let e = parse_any("sin(x3)*u1").unwrap();
        assert_eq!(differentiate(&e, &sym("x7")), Expr::zero());
    }

    #[test]
    fn chain_rule_through_applications() {
        let e = parse_any("sin(x1^2)").unwrap();
        let d = differentiate(&e, &sym("x1"));
        assert_eq!(d, parse_any("2*x1*cos(x1^2)").unwrap());
    }

    #[test]
    fn substitution_is_simultaneous() {
        let e = parse_any("x+y").unwrap();
        let mut b = BTreeMap::new();
        b.insert(sym("x"), Expr::symbol("y"));
        b.insert(sym("y"), Expr::symbol("x"));
        assert_eq!(substitute(&e, &b), parse_any("y+x").unwrap());
    }

    #[test]
    fn substitution_with_empty_bindings_is_identity() {
        let e = parse_any("x1*(x3+1)").unwrap();
        assert_eq!(substitute(&e, &BTreeMap::new()), e);
    }

    #[test]
    fn shift_of_state_through_update_law() {
        let e = Expr::symbol("x3");
        let mut b = BTreeMap::new();
        b.insert(sym("x3"), parse_any("u1+2*u2").unwrap());
        assert_eq!(substitute(&e, &b), parse_any("u1+2*u2").unwrap());
    }

    #[test]
    fn evaluate_examples() {
        let e = parse_any("x1*(x3+1)").unwrap();
        assert_eq!(evaluate(&e, &at(&[("x1", 2.0), ("x3", 3.0)])).unwrap(), 8.0);

        let q = parse_any("(x2+x3+3*x4)/(u1+2*u2+1)").unwrap();
        let zero = at(&[("x2", 0.0), ("x3", 0.0), ("x4", 0.0), ("u1", 0.0), ("u2", 0.0)]);
        assert_eq!(evaluate(&q, &zero).unwrap(), 0.0);

        let s = parse_any("sin(x3)*u1").unwrap();
        assert_eq!(evaluate(&s, &at(&[("x3", 0.0), ("u1", 5.0)])).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_reports_division_by_zero() {
        let q = parse_any("1/x1").unwrap();
        match evaluate(&q, &at(&[("x1", 0.0)])) {
            Err(EvalError::DivisionByZero(_)) => {}
            other => panic!("expected division by zero, got {other:?}"),
        }
    }

    #[test]
    fn evaluate_reports_domain_errors() {
        let l = parse_any("log(x1)").unwrap();
        match evaluate(&l, &at(&[("x1", -1.0)])) {
            Err(EvalError::DomainError(_)) => {}
            other => panic!("expected domain error, got {other:?}"),
        }
        let s = parse_any("sqrt(x1)").unwrap();
        match evaluate(&s, &at(&[("x1", -4.0)])) {
            Err(EvalError::DomainError(_)) => {}
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn exact_rational_path() {
        let e = parse_any("(x1+1)/(x1-1)").unwrap();
        let mut p = BTreeMap::new();
        p.insert(sym("x1"), BigRational::new(3.into(), 1.into()));
        assert_eq!(
            eval_exact_rational(&e, &p).unwrap(),
            BigRational::new(2.into(), 1.into())
        );
        p.insert(sym("x1"), BigRational::from_integer(1.into()));
        assert_eq!(eval_exact_rational(&e, &p), Err(ExactEvalFail::Singular));
        let t = parse_any("sin(x1)").unwrap();
        p.insert(sym("x1"), BigRational::from_integer(2.into()));
        assert_eq!(eval_exact_rational(&t, &p), Err(ExactEvalFail::NonRational));
    }

    #[test]
    fn derivative_linearity() {
        let e1 = parse_any("x1*(x3+1)").unwrap();
        let e2 = parse_any("sin(x3)").unwrap();
        let combo = mk_add(vec![
            mk_mul(vec![Expr::rat(3, 2), e1.clone()]),
            mk_mul(vec![Expr::int(-2), e2.clone()]),
        ]);
        let lhs = differentiate(&combo, &sym("x3"));
        let rhs = mk_add(vec![
            mk_mul(vec![Expr::rat(3, 2), differentiate(&e1, &sym("x3"))]),
            mk_mul(vec![Expr::int(-2), differentiate(&e2, &sym("x3"))]),
        ]);
        assert_eq!(lhs, rhs);
    }
}
