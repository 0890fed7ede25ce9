//! Normalization helpers: expansion to a polynomial normal form over opaque
//! atoms, denominator clearing, and the zero decision built from the two.
//!
//! The zero test treats function applications as independent atoms keyed by
//! their canonical form, after the directed rewrite sin^2 -> 1-cos^2 that the
//! constructors apply. Denominators are assumed generically nonzero.

use std::collections::{BTreeMap, BTreeSet};

use super::calculus::differentiate;
use super::expr::{mk_add, mk_apply, mk_div, mk_mul, mk_neg, mk_pow, mk_sub, simplify, Expr, Symbol};

/// Distributes products and integer powers over sums, recursively through
/// quotients and function arguments.
pub fn expand(e: &Expr) -> Expr {
    match e {
        Expr::Num(_) | Expr::Var(_) => e.clone(),
        Expr::Apply(f, a) => mk_apply(*f, expand(a)),
        Expr::Add(ts) => mk_add(ts.iter().map(expand).collect()),
        Expr::Mul(fs) => {
            let mut acc: Vec<Expr> = vec![Expr::one()];
            for f in fs {
                acc = cross(&acc, &expand(f).add_terms());
            }
            mk_add(acc)
        }
        Expr::Pow(b, k) => {
            let base = expand(b);
            if *k >= 2 {
                if let Expr::Add(_) = base {
                    let terms = base.add_terms();
                    let mut acc: Vec<Expr> = vec![Expr::one()];
                    for _ in 0..*k {
                        acc = cross(&acc, &terms);
                    }
                    return mk_add(acc);
                }
            }
            mk_pow(base, *k)
        }
        Expr::Div(n, d) => mk_div(expand(n), expand(d)),
        Expr::Neg(inner) => mk_neg(expand(inner)),
    }
}

fn cross(left: &[Expr], right: &[Expr]) -> Vec<Expr> {
    let mut out = Vec::with_capacity(left.len() * right.len());
    for a in left {
        for b in right {
            out.push(mk_mul(vec![a.clone(), b.clone()]));
        }
    }
    out
}

/// Rewrites `e` as a quotient (num, den) free of nested quotients outside
/// function arguments. The pair satisfies e = num/den up to canonicalization.
pub fn rationalize(e: &Expr) -> (Expr, Expr) {
    match e {
        Expr::Num(_) | Expr::Var(_) | Expr::Apply(..) => (e.clone(), Expr::one()),
        Expr::Add(ts) => {
            let mut num = Expr::zero();
            let mut den = Expr::one();
            for t in ts {
                let (tn, td) = rationalize(t);
                if td == den {
                    num = mk_add(vec![num, tn]);
                } else {
                    num = mk_add(vec![mk_mul(vec![num, td.clone()]), mk_mul(vec![tn, den.clone()])]);
                    den = mk_mul(vec![den, td]);
                }
            }
            (num, den)
        }
        Expr::Mul(fs) => {
            let mut num = Expr::one();
            let mut den = Expr::one();
            for f in fs {
                let (fn_, fd) = rationalize(f);
                num = mk_mul(vec![num, fn_]);
                den = mk_mul(vec![den, fd]);
            }
            (num, den)
        }
        Expr::Pow(b, k) => {
            let (bn, bd) = rationalize(b);
            if *k >= 0 {
                (mk_pow(bn, *k), mk_pow(bd, *k))
            } else {
                (mk_pow(bd, -*k), mk_pow(bn, -*k))
            }
        }
        Expr::Div(n, d) => {
            let (nn, nd) = rationalize(n);
            let (dn, dd) = rationalize(d);
            (mk_mul(vec![nn, dd]), mk_mul(vec![nd, dn]))
        }
        Expr::Neg(inner) => {
            let (n, d) = rationalize(inner);
            (mk_neg(n), d)
        }
    }
}

/// Decides whether `e` is identically zero on the open set where its
/// denominators do not vanish.
pub fn is_zero(e: &Expr) -> bool {
    if e.is_zero_const() {
        return true;
    }
    let s = simplify(e);
    if s.is_zero_const() {
        return true;
    }
    let (num, _den) = rationalize(&s);
    expand(&num).is_zero_const()
}

/// Decides whether two expressions agree as functions, under the same
/// generic-denominator caveat as `is_zero`.
pub fn equivalent(a: &Expr, b: &Expr) -> bool {
    is_zero(&mk_add(vec![a.clone(), mk_neg(b.clone())]))
}

/// Cancels denominator factors that divide the numerator exactly. Factors
/// linear in one of their variables are removed by synthetic division;
/// everything else stays in place. This reduces the quotients produced by
/// coordinate substitutions without a full polynomial gcd.
pub fn cancel_quotient(e: &Expr) -> Expr {
    let simplified = simplify(e);
    let (num, den) = rationalize(&simplified);
    if den.as_rational().is_some() {
        return simplified;
    }
    let mut num = expand(&num);
    let mut pool = Vec::new();
    collect_den_factors(&den, &mut pool);
    let mut kept = Vec::new();
    for f in pool {
        if f.as_rational().is_some() {
            kept.push(f);
            continue;
        }
        match divide_linear(&num, &f) {
            Some(q) => num = q,
            None => kept.push(f),
        }
    }
    simplify(&mk_div(num, mk_mul(kept)))
}

/// Like `cancel_quotient`, but additionally distributes the numerator when
/// doing so removes variables from the expression altogether. Coordinate
/// substitutions leave behind terms that cancel only after full expansion,
/// and the cancelled variables must be really gone before anything counts
/// dimensions or dependencies; when nothing drops out the lighter factored
/// form is kept.
pub fn collapse(e: &Expr) -> Expr {
    let light = cancel_quotient(e);
    let (num, den) = rationalize(&light);
    let wide = cancel_quotient(&mk_div(expand(&num), den));
    let kept: BTreeSet<Symbol> = light.free_vars();
    if wide.free_vars().len() < kept.len() {
        wide
    } else {
        light
    }
}

fn collect_den_factors(d: &Expr, out: &mut Vec<Expr>) {
    match d {
        Expr::Mul(fs) => fs.iter().for_each(|f| collect_den_factors(f, out)),
        Expr::Pow(b, k) if *k > 0 => {
            for _ in 0..*k {
                collect_den_factors(b, out);
            }
        }
        other => out.push(other.clone()),
    }
}

/// Exact division of `num` by a factor that is linear in one of its
/// variables; None when no such variable works or the remainder is nonzero.
fn divide_linear(num: &Expr, f: &Expr) -> Option<Expr> {
    for z in f.free_vars() {
        let a = differentiate(f, &z);
        if is_zero(&a) || a.contains(&z) {
            continue;
        }
        let b = simplify(&mk_sub(f.clone(), mk_mul(vec![a.clone(), Expr::var(&z)])));
        if b.contains(&z) {
            continue;
        }
        if let Some(q) = synthetic_division(num, &z, &a, &b) {
            return Some(q);
        }
    }
    None
}

/// Degree of `term` in `z` and the co-factor, for terms where z appears
/// only through plain powers.
fn z_split(term: &Expr, z: &Symbol) -> Option<(i32, Expr)> {
    match term {
        Expr::Var(s) if s == z => Some((1, Expr::one())),
        Expr::Pow(b, k) if matches!(&**b, Expr::Var(s) if s == z) && *k > 0 => {
            Some((*k, Expr::one()))
        }
        Expr::Mul(fs) => {
            let mut deg = 0;
            let mut rest = Vec::new();
            for f in fs {
                match f {
                    Expr::Var(s) if s == z => deg += 1,
                    Expr::Pow(b, k) if matches!(&**b, Expr::Var(s) if s == z) && *k > 0 => {
                        deg += *k;
                    }
                    _ if f.contains(z) => return None,
                    _ => rest.push(f.clone()),
                }
            }
            Some((deg, mk_mul(rest)))
        }
        Expr::Neg(inner) => {
            let (d, r) = z_split(inner, z)?;
            Some((d, mk_neg(r)))
        }
        _ if term.contains(z) => None,
        _ => Some((0, term.clone())),
    }
}

/// Divides `num` by a·z + b with z-free a, b; None on nonzero remainder.
fn synthetic_division(num: &Expr, z: &Symbol, a: &Expr, b: &Expr) -> Option<Expr> {
    if is_zero(num) {
        return Some(Expr::zero());
    }
    let mut by_deg: BTreeMap<i32, Vec<Expr>> = BTreeMap::new();
    for t in expand(num).add_terms() {
        let (d, rest) = z_split(&t, z)?;
        by_deg.entry(d).or_default().push(rest);
    }
    let top = *by_deg.keys().max()?;
    if top == 0 {
        return None;
    }
    let coeff = |d: i32| by_deg.get(&d).map(|v| mk_add(v.clone())).unwrap_or_else(Expr::zero);
    let mut quotient = Vec::with_capacity(top as usize);
    let mut carry = coeff(top);
    for i in (1..=top).rev() {
        let qi = simplify(&mk_div(carry, a.clone()));
        quotient.push(mk_mul(vec![qi.clone(), mk_pow(Expr::var(z), i - 1)]));
        carry = mk_add(vec![coeff(i - 1), mk_neg(mk_mul(vec![qi, b.clone()]))]);
    }
    if !is_zero(&carry) {
        return None;
    }
    Some(simplify(&mk_add(quotient)))
}

#[cfg(test)]
mod tests {
    use super::super::parse::parse_any;
    use super::*;

    #[test]
    fn binomial_square_expands() {
        let e = parse_any("(x+y)^2").unwrap();
        assert_eq!(expand(&e), parse_any("x^2+2*x*y+y^2").unwrap());
    }

    #[test]
    fn shared_linear_factor_cancels() {
        let e = parse_any("(x*y+x)/(y+1)").unwrap();
        assert_eq!(cancel_quotient(&e), parse_any("x").unwrap());
        // one power out of a square, the other stays
        let e = parse_any("-(x*y+x)/(y+1)^2").unwrap();
        assert_eq!(cancel_quotient(&e), parse_any("-x/(y+1)").unwrap());
    }

    #[test]
    fn cancellation_survives_disguised_numerators() {
        // numerator equal to x*(y+1) only after recollection
        let e = parse_any("(x*(y+2)-x)/(y+1)").unwrap();
        assert_eq!(cancel_quotient(&e), parse_any("x").unwrap());
    }

    #[test]
    fn non_divisible_quotients_are_left_alone() {
        let e = parse_any("(x+1)/(y+1)").unwrap();
        assert!(equivalent(&cancel_quotient(&e), &e));
        let plain = parse_any("x+sin(y)").unwrap();
        assert_eq!(cancel_quotient(&plain), plain);
    }

    #[test]
    fn factors_inside_function_arguments_stay_atomic() {
        let e = parse_any("sin(x/(y+1))*(y+1)/(y+1)").unwrap();
        assert!(equivalent(&cancel_quotient(&e), &parse_any("sin(x/(y+1))").unwrap()));
    }

    #[test]
    fn expansion_decides_binomial_identity() {
        let e = parse_any("(x+y)^2-x^2-2*x*y-y^2").unwrap();
        assert!(is_zero(&e));
    }

    #[test]
    fn quotient_difference_is_zero() {
        let e = parse_any("1/x+1/y-(x+y)/(x*y)").unwrap();
        assert!(is_zero(&e));
    }

    #[test]
    fn nonzero_is_not_declared_zero() {
        assert!(!is_zero(&parse_any("x*y-x").unwrap()));
        assert!(!is_zero(&parse_any("1/x-1/y").unwrap()));
        assert!(!is_zero(&parse_any("sin(x)-cos(x)").unwrap()));
    }

    #[test]
    fn pythagorean_combination_is_zero() {
        let e = parse_any("u*sin(t)^2+u*cos(t)^2-u").unwrap();
        assert!(is_zero(&e));
    }

    #[test]
    fn nested_quotients_rationalize() {
        let e = parse_any("(1+1/x)/(1-1/x)").unwrap();
        let (n, d) = rationalize(&e);
        assert!(equivalent(&mk_div(n, d), &parse_any("(x+1)/(x-1)").unwrap()));
    }

    #[test]
    fn equivalence_of_rearranged_forms() {
        let a = parse_any("x1*(x3+1)").unwrap();
        let b = parse_any("x1*x3+x1").unwrap();
        assert!(equivalent(&a, &b));
        assert!(!equivalent(&a, &parse_any("x1*x3").unwrap()));
    }

    #[test]
    fn atoms_with_distinct_arguments_are_independent() {
        assert!(!is_zero(&parse_any("sin(x)-sin(y)").unwrap()));
        assert!(is_zero(&parse_any("sin(x+y)-sin(y+x)").unwrap()));
    }
}
