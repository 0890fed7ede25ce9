//! Expression trees over exact rational constants with a canonical form.
//!
//! Every constructor in this module returns a canonicalized node: sums and
//! products are flattened and sorted, rational constants are folded, zero
//! summands and unit factors are removed, and like terms and like factors are
//! collected. Two expressions that agree under the canonical order compare
//! structurally equal, which downstream code relies on for zero tests and
//! cancellation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Pow, Signed, Zero};

/// A named scalar symbol, optionally forward-shifted in time.
///
/// Shift 0 prints as the bare name; `x1@2` denotes the second forward shift
/// of `x1`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Symbol {
    base: Arc<str>,
    shift: u32,
}

impl Symbol {
    pub fn new(base: &str) -> Self {
        Symbol { base: Arc::from(base), shift: 0 }
    }

    pub fn with_shift(base: &str, shift: u32) -> Self {
        Symbol { base: Arc::from(base), shift }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn shift(&self) -> u32 {
        self.shift
    }

    /// The same base shifted forward `by` additional steps.
    pub fn shifted(&self, by: u32) -> Symbol {
        Symbol { base: self.base.clone(), shift: self.shift + by }
    }

    pub fn at_shift(&self, shift: u32) -> Symbol {
        Symbol { base: self.base.clone(), shift }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.shift == 0 {
            write!(f, "{}", self.base)
        } else {
            write!(f, "{}@{}", self.base, self.shift)
        }
    }
}

/// Elementary function tags admitted in expressions.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "tan" => Some(Func::Tan),
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }
}

impl fmt::Display for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Symbolic expression. The variant order is the canonical sort order:
/// constants < variables < function applications < powers < products < sums
/// < quotients. `Neg` exists only as a construction-time convenience and
/// never survives canonicalization.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Expr {
    Num(BigRational),
    Var(Symbol),
    Apply(Func, Box<Expr>),
    Pow(Box<Expr>, i32),
    Mul(Vec<Expr>),
    Add(Vec<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
}

impl Expr {
    pub fn zero() -> Expr {
        Expr::Num(BigRational::zero())
    }

    pub fn one() -> Expr {
        Expr::Num(BigRational::one())
    }

    pub fn int(n: i64) -> Expr {
        Expr::Num(BigRational::from_integer(BigInt::from(n)))
    }

    /// Exact rational constant p/q. Panics if q is zero.
    pub fn rat(p: i64, q: i64) -> Expr {
        Expr::Num(BigRational::new(BigInt::from(p), BigInt::from(q)))
    }

    pub fn num(r: BigRational) -> Expr {
        Expr::Num(r)
    }

    pub fn var(s: &Symbol) -> Expr {
        Expr::Var(s.clone())
    }

    pub fn symbol(name: &str) -> Expr {
        Expr::Var(Symbol::new(name))
    }

    pub fn as_rational(&self) -> Option<&BigRational> {
        match self {
            Expr::Num(r) => Some(r),
            _ => None,
        }
    }

    pub fn is_zero_const(&self) -> bool {
        matches!(self, Expr::Num(r) if r.is_zero())
    }

    pub fn is_one_const(&self) -> bool {
        matches!(self, Expr::Num(r) if r.is_one())
    }

    /// Summands of a canonical expression; a sum yields its operands, zero
    /// yields nothing, anything else yields itself.
    pub fn add_terms(&self) -> Vec<Expr> {
        match self {
            Expr::Add(ts) => ts.clone(),
            e if e.is_zero_const() => Vec::new(),
            e => vec![e.clone()],
        }
    }

    pub fn free_vars(&self) -> BTreeSet<Symbol> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Symbol>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(s) => {
                out.insert(s.clone());
            }
            Expr::Apply(_, a) => a.collect_vars(out),
            Expr::Pow(b, _) => b.collect_vars(out),
            Expr::Mul(fs) => fs.iter().for_each(|e| e.collect_vars(out)),
            Expr::Add(ts) => ts.iter().for_each(|e| e.collect_vars(out)),
            Expr::Div(n, d) => {
                n.collect_vars(out);
                d.collect_vars(out);
            }
            Expr::Neg(e) => e.collect_vars(out),
        }
    }

    pub fn contains(&self, s: &Symbol) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => v == s,
            Expr::Apply(_, a) => a.contains(s),
            Expr::Pow(b, _) => b.contains(s),
            Expr::Mul(fs) => fs.iter().any(|e| e.contains(s)),
            Expr::Add(ts) => ts.iter().any(|e| e.contains(s)),
            Expr::Div(n, d) => n.contains(s) || d.contains(s),
            Expr::Neg(e) => e.contains(s),
        }
    }
}

fn rat_pow(r: &BigRational, k: i64) -> BigRational {
    Pow::pow(r.clone(), k as i32)
}

/// Canonical sum of the given terms.
pub fn mk_add(terms: Vec<Expr>) -> Expr {
    let mut coef = BigRational::zero();
    let mut map: BTreeMap<Expr, BigRational> = BTreeMap::new();
    let mut stack = terms;
    while let Some(t) = stack.pop() {
        match t {
            Expr::Num(r) => coef += r,
            Expr::Add(ts) => stack.extend(ts),
            Expr::Neg(inner) => stack.push(mk_neg(*inner)),
            other => {
                let (c, core) = split_coef(other);
                *map.entry(core).or_insert_with(BigRational::zero) += c;
            }
        }
    }
    let mut out: Vec<Expr> = Vec::new();
    for (core, c) in map {
        if c.is_zero() {
            continue;
        }
        out.push(attach_coef(c, core));
    }
    if !coef.is_zero() {
        out.push(Expr::Num(coef));
    }
    out.sort();
    match out.len() {
        0 => Expr::zero(),
        1 => out.pop().unwrap(),
        _ => Expr::Add(out),
    }
}

/// Splits a canonical non-sum term into rational coefficient and core.
fn split_coef(e: Expr) -> (BigRational, Expr) {
    match e {
        Expr::Num(r) => (r, Expr::one()),
        Expr::Mul(mut fs) => {
            if matches!(fs.first(), Some(Expr::Num(_))) {
                let c = match fs.remove(0) {
                    Expr::Num(r) => r,
                    _ => unreachable!(),
                };
                let core = if fs.len() == 1 { fs.pop().unwrap() } else { Expr::Mul(fs) };
                (c, core)
            } else {
                (BigRational::one(), Expr::Mul(fs))
            }
        }
        Expr::Div(n, d) => {
            let (c, ncore) = split_coef(*n);
            (c, Expr::Div(Box::new(ncore), d))
        }
        other => (BigRational::one(), other),
    }
}

/// Reattaches a rational coefficient to a coefficient-free canonical core.
fn attach_coef(c: BigRational, core: Expr) -> Expr {
    if c.is_one() {
        return core;
    }
    match core {
        Expr::Num(r) => Expr::Num(c * r),
        Expr::Mul(fs) => {
            let mut v = Vec::with_capacity(fs.len() + 1);
            v.push(Expr::Num(c));
            v.extend(fs);
            Expr::Mul(v)
        }
        Expr::Div(n, d) => Expr::Div(Box::new(attach_coef(c, *n)), d),
        other => Expr::Mul(vec![Expr::Num(c), other]),
    }
}

struct FactorParts {
    coef_num: BigRational,
    coef_den: BigRational,
    nmap: BTreeMap<Expr, i64>,
    dmap: BTreeMap<Expr, i64>,
    zero_num: bool,
    zero_den: bool,
}

fn collect_factors(seed: Vec<(Expr, i64, bool)>) -> FactorParts {
    let mut parts = FactorParts {
        coef_num: BigRational::one(),
        coef_den: BigRational::one(),
        nmap: BTreeMap::new(),
        dmap: BTreeMap::new(),
        zero_num: false,
        zero_den: false,
    };
    let mut stack = seed;
    while let Some((e, mult, den)) = stack.pop() {
        if mult == 0 {
            continue;
        }
        match e {
            Expr::Num(r) => {
                if r.is_zero() {
                    if den {
                        parts.zero_den = true;
                    } else {
                        parts.zero_num = true;
                    }
                } else {
                    let p = rat_pow(&r, mult);
                    if den {
                        parts.coef_den *= p;
                    } else {
                        parts.coef_num *= p;
                    }
                }
            }
            Expr::Mul(fs) => stack.extend(fs.into_iter().map(|f| (f, mult, den))),
            Expr::Pow(b, e2) => {
                let m = mult * e2 as i64;
                if m > 0 {
                    stack.push((*b, m, den));
                } else if m < 0 {
                    stack.push((*b, -m, !den));
                }
            }
            Expr::Div(n, d) => {
                stack.push((*n, mult, den));
                stack.push((*d, mult, !den));
            }
            Expr::Neg(inner) => {
                if mult % 2 != 0 {
                    parts.coef_num = -parts.coef_num.clone();
                }
                stack.push((*inner, mult, den));
            }
            other => {
                let side = if den { &mut parts.dmap } else { &mut parts.nmap };
                *side.entry(other).or_insert(0) += mult;
            }
        }
    }
    rewrite_sin_powers(&mut parts.nmap);
    rewrite_sin_powers(&mut parts.dmap);
    parts
}

/// Directed rewrite sin(t)^k -> (1 - cos(t)^2)^(k div 2) * sin(t)^(k mod 2)
/// so that the Pythagorean identity is decided structurally.
fn rewrite_sin_powers(map: &mut BTreeMap<Expr, i64>) {
    let targets: Vec<(Expr, i64)> = map
        .iter()
        .filter(|(k, v)| matches!(k, Expr::Apply(Func::Sin, _)) && **v >= 2)
        .map(|(k, v)| (k.clone(), *v))
        .collect();
    for (key, e) in targets {
        map.remove(&key);
        let arg = match &key {
            Expr::Apply(Func::Sin, a) => a.as_ref().clone(),
            _ => unreachable!(),
        };
        let k = e / 2;
        let r = e % 2;
        let cos2 = Expr::Pow(Box::new(Expr::Apply(Func::Cos, Box::new(arg))), 2);
        let base = mk_add(vec![Expr::one(), mk_neg(cos2)]);
        *map.entry(base).or_insert(0) += k;
        if r == 1 {
            *map.entry(key).or_insert(0) += 1;
        }
    }
    map.retain(|_, v| *v != 0);
}

/// Rebuilds a flat product from a coefficient and a factor-power map.
fn rebuild_product(coef: BigRational, map: BTreeMap<Expr, i64>) -> Expr {
    let mut fs: Vec<Expr> = Vec::new();
    for (base, e) in map {
        match e {
            0 => {}
            1 => fs.push(base),
            k if k > 1 => fs.push(Expr::Pow(Box::new(base), k as i32)),
            _ => unreachable!("negative exponent on numerator side"),
        }
    }
    if coef.is_zero() {
        return Expr::zero();
    }
    if fs.is_empty() {
        return Expr::Num(coef);
    }
    if !coef.is_one() {
        fs.push(Expr::Num(coef));
    }
    fs.sort();
    if fs.len() == 1 {
        fs.pop().unwrap()
    } else {
        Expr::Mul(fs)
    }
}

/// Canonical product of the given factors.
pub fn mk_mul(factors: Vec<Expr>) -> Expr {
    let seed = factors.into_iter().map(|f| (f, 1i64, false)).collect();
    let parts = collect_factors(seed);
    finish_quotient(parts)
}

/// Canonical quotient n/d with structural cancellation and a sign-normalized
/// denominator. Division by a literal zero is preserved as a quotient with
/// denominator 0; `evaluate` reports it.
pub fn mk_div(n: Expr, d: Expr) -> Expr {
    let seed = vec![(n, 1i64, false), (d, 1i64, true)];
    let parts = collect_factors(seed);
    finish_quotient(parts)
}

fn finish_quotient(mut parts: FactorParts) -> Expr {
    if parts.zero_den {
        let num = if parts.zero_num {
            Expr::zero()
        } else {
            let FactorParts { coef_num, nmap, .. } = parts;
            rebuild_product(coef_num, nmap)
        };
        return Expr::Div(Box::new(num), Box::new(Expr::zero()));
    }
    if parts.zero_num {
        return Expr::zero();
    }
    // cancel common structural factors
    let keys: Vec<Expr> = parts.nmap.keys().filter(|k| parts.dmap.contains_key(*k)).cloned().collect();
    for k in keys {
        let a = parts.nmap[&k];
        let b = parts.dmap[&k];
        let c = a.min(b);
        if a == c {
            parts.nmap.remove(&k);
        } else {
            parts.nmap.insert(k.clone(), a - c);
        }
        if b == c {
            parts.dmap.remove(&k);
        } else {
            parts.dmap.insert(k, b - c);
        }
    }
    let coef = parts.coef_num / parts.coef_den;
    if parts.dmap.is_empty() {
        return rebuild_product(coef, parts.nmap);
    }
    let den = rebuild_product(BigRational::one(), parts.dmap);
    let (den, flip) = normalize_leading_sign(den);
    let coef = if flip { -coef } else { coef };
    let num = rebuild_product(coef, parts.nmap);
    Expr::Div(Box::new(num), Box::new(den))
}

/// Flips the expression so its leading summand has a positive coefficient.
fn normalize_leading_sign(e: Expr) -> (Expr, bool) {
    if leading_sign_negative(&e) {
        (negate_distrib(e), true)
    } else {
        (e, false)
    }
}

fn leading_sign_negative(e: &Expr) -> bool {
    match e {
        Expr::Num(r) => r.is_negative(),
        Expr::Mul(fs) => matches!(fs.first(), Some(Expr::Num(r)) if r.is_negative()),
        Expr::Add(ts) => ts.first().map(leading_sign_negative).unwrap_or(false),
        Expr::Div(n, _) => leading_sign_negative(n),
        Expr::Neg(_) => true,
        _ => false,
    }
}

/// Negation that distributes over sums so denominators stay coefficient-free.
fn negate_distrib(e: Expr) -> Expr {
    match e {
        Expr::Add(ts) => mk_add(ts.into_iter().map(negate_distrib).collect()),
        _ => mk_neg(e),
    }
}

/// Canonical integer power.
pub fn mk_pow(base: Expr, exp: i32) -> Expr {
    if exp == 0 {
        return Expr::one();
    }
    if exp == 1 {
        return base;
    }
    match base {
        Expr::Num(r) => {
            if r.is_zero() && exp < 0 {
                return Expr::Div(Box::new(Expr::one()), Box::new(Expr::zero()));
            }
            Expr::Num(Pow::pow(r, exp))
        }
        Expr::Mul(fs) => mk_mul(fs.into_iter().map(|f| mk_pow(f, exp)).collect()),
        Expr::Pow(b, e) => mk_pow(*b, e.checked_mul(exp).expect("exponent overflow")),
        Expr::Div(n, d) => mk_div(mk_pow(*n, exp), mk_pow(*d, exp)),
        Expr::Neg(inner) => {
            let sign = if exp % 2 == 0 { 1 } else { -1 };
            mk_mul(vec![Expr::int(sign), mk_pow(*inner, exp)])
        }
        b => {
            if exp < 0 {
                return mk_div(Expr::one(), mk_pow(b, -exp));
            }
            if let Expr::Apply(Func::Sin, arg) = &b {
                let k = exp / 2;
                let r = exp % 2;
                let cos2 = Expr::Pow(Box::new(Expr::Apply(Func::Cos, arg.clone())), 2);
                let pyth = mk_add(vec![Expr::one(), mk_neg(cos2)]);
                let mut fs = vec![mk_pow(pyth, k)];
                if r == 1 {
                    fs.push(b.clone());
                }
                return mk_mul(fs);
            }
            Expr::Pow(Box::new(b), exp)
        }
    }
}

pub fn mk_neg(e: Expr) -> Expr {
    mk_mul(vec![Expr::int(-1), e])
}

pub fn mk_sub(a: Expr, b: Expr) -> Expr {
    mk_add(vec![a, mk_neg(b)])
}

/// Canonical function application with exact special values folded.
pub fn mk_apply(f: Func, arg: Expr) -> Expr {
    if let Expr::Num(r) = &arg {
        match f {
            Func::Sin | Func::Tan if r.is_zero() => return Expr::zero(),
            Func::Cos if r.is_zero() => return Expr::one(),
            Func::Exp if r.is_zero() => return Expr::one(),
            Func::Log if r.is_one() => return Expr::zero(),
            Func::Sqrt if !r.is_negative() => {
                let ns = r.numer().sqrt();
                let ds = r.denom().sqrt();
                if &ns * &ns == *r.numer() && &ds * &ds == *r.denom() {
                    return Expr::Num(BigRational::new(ns, ds));
                }
            }
            _ => {}
        }
    }
    if let Expr::Apply(inner_f, inner) = &arg {
        if (f == Func::Exp && *inner_f == Func::Log) || (f == Func::Log && *inner_f == Func::Exp) {
            return inner.as_ref().clone();
        }
    }
    Expr::Apply(f, Box::new(arg))
}

/// The expression with any leading rational coefficient removed; useful for
/// recording nonvanishing assumptions, which are insensitive to scaling.
pub fn drop_rational_coef(e: &Expr) -> Expr {
    let (_, core) = split_coef(e.clone());
    core
}

/// Rebuilds an arbitrary tree bottom-up through the canonical constructors.
pub fn simplify(e: &Expr) -> Expr {
    match e {
        Expr::Num(_) | Expr::Var(_) => e.clone(),
        Expr::Apply(f, a) => mk_apply(*f, simplify(a)),
        Expr::Pow(b, k) => mk_pow(simplify(b), *k),
        Expr::Mul(fs) => mk_mul(fs.iter().map(simplify).collect()),
        Expr::Add(ts) => mk_add(ts.iter().map(simplify).collect()),
        Expr::Div(n, d) => mk_div(simplify(n), simplify(d)),
        Expr::Neg(inner) => mk_neg(simplify(inner)),
    }
}

fn write_num(f: &mut fmt::Formatter<'_>, r: &BigRational) -> fmt::Result {
    if r.denom().is_one() {
        write!(f, "{}", r.numer())
    } else {
        write!(f, "{}/{}", r.numer(), r.denom())
    }
}

/// Splits a term into (is_negative, magnitude) for sum printing.
fn sign_split(t: &Expr) -> (bool, Expr) {
    match t {
        Expr::Num(r) if r.is_negative() => (true, Expr::Num(-r.clone())),
        Expr::Mul(fs) => {
            if let Some(Expr::Num(c)) = fs.first() {
                if c.is_negative() {
                    let mut rest: Vec<Expr> = fs[1..].to_vec();
                    let cpos = -c.clone();
                    if cpos.is_one() {
                        let mag = if rest.len() == 1 { rest.pop().unwrap() } else { Expr::Mul(rest) };
                        return (true, mag);
                    }
                    let mut v = vec![Expr::Num(cpos)];
                    v.extend(rest);
                    return (true, Expr::Mul(v));
                }
            }
            (false, t.clone())
        }
        Expr::Div(n, d) => {
            let (neg, nmag) = sign_split(n);
            if neg {
                (true, Expr::Div(Box::new(nmag), d.clone()))
            } else {
                (false, t.clone())
            }
        }
        _ => (false, t.clone()),
    }
}

fn fmt_sum(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e {
        Expr::Add(ts) => {
            // the rational constant sorts first; print it last
            let (consts, rest): (Vec<&Expr>, Vec<&Expr>) =
                ts.iter().partition(|t| matches!(t, Expr::Num(_)));
            let mut first = true;
            for t in rest.into_iter().chain(consts) {
                let (neg, mag) = sign_split(t);
                if first {
                    if neg {
                        f.write_str("-")?;
                    }
                    first = false;
                } else {
                    f.write_str(if neg { "-" } else { "+" })?;
                }
                fmt_term(&mag, f)?;
            }
            Ok(())
        }
        _ => fmt_term(e, f),
    }
}

fn fmt_term(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e {
        Expr::Mul(fs) => {
            let mut rest: &[Expr] = fs;
            if let Some(Expr::Num(c)) = fs.first() {
                rest = &fs[1..];
                if c == &-BigRational::one() {
                    f.write_str("-")?;
                } else {
                    write_num(f, c)?;
                    f.write_str("*")?;
                }
            }
            let mut first = true;
            for x in rest {
                if !first {
                    f.write_str("*")?;
                }
                first = false;
                fmt_factor(x, f)?;
            }
            Ok(())
        }
        Expr::Div(n, d) => {
            match n.as_ref() {
                Expr::Add(_) => {
                    f.write_str("(")?;
                    fmt_sum(n, f)?;
                    f.write_str(")")?;
                }
                _ => fmt_term(n, f)?,
            }
            f.write_str("/")?;
            match d.as_ref() {
                Expr::Add(_) | Expr::Mul(_) => {
                    f.write_str("(")?;
                    fmt_sum(d, f)?;
                    f.write_str(")")?;
                }
                _ => fmt_factor(d, f)?,
            }
            Ok(())
        }
        _ => fmt_factor(e, f),
    }
}

fn fmt_factor(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e {
        Expr::Num(r) => write_num(f, r),
        Expr::Var(s) => write!(f, "{s}"),
        Expr::Apply(func, a) => {
            write!(f, "{func}(")?;
            fmt_sum(a, f)?;
            f.write_str(")")
        }
        Expr::Pow(b, k) => {
            match b.as_ref() {
                Expr::Var(_) | Expr::Apply(..) => fmt_factor(b, f)?,
                _ => {
                    f.write_str("(")?;
                    fmt_sum(b, f)?;
                    f.write_str(")")?;
                }
            }
            write!(f, "^{k}")
        }
        Expr::Neg(inner) => {
            f.write_str("-(")?;
            fmt_sum(inner, f)?;
            f.write_str(")")
        }
        Expr::Add(_) | Expr::Mul(_) | Expr::Div(..) => {
            f.write_str("(")?;
            fmt_sum(e, f)?;
            f.write_str(")")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_sum(self, f)
    }
}
