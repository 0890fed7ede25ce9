//! Straightening of involutive distributions: a coordinate change after
//! which the distribution is spanned by the last coordinate fields. The
//! supported classes are constant-coefficient generators (kernel
//! computation) and polynomial generators with polynomial first integrals
//! up to a degree cap (linear ansatz).

use std::collections::{BTreeMap, BTreeSet};

use num_rational::BigRational;
use num_traits::Zero;

use crate::symbolic::calculus::{eval_exact_rational, evaluate, substitute};
use crate::symbolic::expr::{mk_add, mk_mul, mk_pow, mk_sub, simplify, Expr, Symbol};
use crate::symbolic::linsolve::{solve_linear_symbolic, LinearSolution};
use crate::symbolic::normal::{cancel_quotient, expand, is_zero, rationalize};
use crate::symbolic::rank::generic_rank;
use crate::symbolic::solve_cascade;

use super::{
    jacobian, normalize_generator, primitive_integer_vector, value_point, Distribution,
    GeometryError, VectorField,
};

/// An invertible coordinate change constructed by straightening. The new
/// coordinates are ordered first integrals first; `targets` are the trailing
/// coordinates whose fields span the straightened distribution.
#[derive(Clone, Debug)]
pub struct Transformation {
    pub new_names: Vec<Symbol>,
    pub targets: Vec<Symbol>,
    /// new symbol -> expression in the old coordinates.
    pub forward: Vec<(Symbol, Expr)>,
    /// old symbol -> expression in the new coordinates.
    pub inverse: Vec<(Symbol, Expr)>,
    /// Expressions assumed nonzero when inverting.
    pub assumptions: Vec<Expr>,
}

impl Transformation {
    pub fn forward_map(&self) -> BTreeMap<Symbol, Expr> {
        self.forward.iter().cloned().collect()
    }

    pub fn inverse_map(&self) -> BTreeMap<Symbol, Expr> {
        self.inverse.iter().cloned().collect()
    }

    /// Exact image of an old-coordinate point, merged over the input point.
    pub fn image_point(
        &self,
        point: &BTreeMap<Symbol, BigRational>,
    ) -> Option<BTreeMap<Symbol, BigRational>> {
        let mut out = point.clone();
        for (sym, expr) in &self.forward {
            out.insert(sym.clone(), eval_exact_rational(expr, point).ok()?);
        }
        Some(out)
    }
}

fn fail(reason: &str) -> GeometryError {
    GeometryError::StraighteningFailed { reason: reason.to_string() }
}

fn as_rational_matrix(gens: &[VectorField]) -> Option<Vec<Vec<BigRational>>> {
    gens.iter()
        .map(|g| {
            g.coefficients
                .iter()
                .map(|c| c.as_rational().cloned())
                .collect::<Option<Vec<_>>>()
        })
        .collect()
}

/// Pivot columns of the row space of `rows`, scanning columns right to
/// left, returned in ascending order.
fn right_to_left_pivots(rows: &[Vec<BigRational>], ncols: usize) -> Vec<usize> {
    let mut work: Vec<Vec<BigRational>> = rows.to_vec();
    let mut used = vec![false; work.len()];
    let mut pivots = Vec::new();
    for col in (0..ncols).rev() {
        let Some(prow) = (0..work.len()).find(|&r| !used[r] && !work[r][col].is_zero()) else {
            continue;
        };
        used[prow] = true;
        pivots.push(col);
        let pivot = work[prow][col].clone();
        let pivot_row = work[prow].clone();
        for (r, row) in work.iter_mut().enumerate() {
            if r == prow || row[col].is_zero() {
                continue;
            }
            let factor = &row[col] / &pivot;
            for c in 0..ncols {
                let delta = &factor * &pivot_row[c];
                row[c] = &row[c] - delta;
            }
        }
    }
    pivots.sort_unstable();
    pivots
}

fn linear_form(coeffs: &[BigRational], frame: &[Symbol]) -> Expr {
    let terms = coeffs
        .iter()
        .zip(frame)
        .filter(|(c, _)| !c.is_zero())
        .map(|(c, s)| mk_mul(vec![Expr::num(c.clone()), Expr::var(s)]))
        .collect();
    simplify(&mk_add(terms))
}

/// Constant-coefficient case: first integrals from the kernel of the
/// generator matrix, complements from a right-to-left pivot scan.
fn constant_straightening(
    rows: &[Vec<BigRational>],
    frame: &[Symbol],
) -> Result<(Vec<Expr>, Vec<usize>), GeometryError> {
    let n = frame.len();
    let lambda: Vec<Symbol> = (0..n).map(|i| Symbol::new(&format!("_l{i}"))).collect();
    let equations: Vec<Expr> = rows
        .iter()
        .map(|row| {
            let terms = row
                .iter()
                .zip(&lambda)
                .map(|(c, l)| mk_mul(vec![Expr::num(c.clone()), Expr::var(l)]))
                .collect();
            mk_add(terms)
        })
        .collect();
    let out = solve_linear_symbolic(&equations, &lambda, None)
        .map_err(|_| fail("kernel system is not linear"))?;
    let integrals = match out.solution {
        LinearSolution::Unique(_) => Vec::new(),
        LinearSolution::NonUnique { basis, .. } => {
            let mut integrals = Vec::with_capacity(basis.len());
            for vec in &basis {
                let vals: Vec<BigRational> = vec
                    .iter()
                    .map(|e| e.as_rational().cloned())
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| fail("kernel basis is not rational"))?;
                let prim = primitive_integer_vector(&vals)
                    .ok_or_else(|| fail("kernel basis contains a zero vector"))?;
                integrals.push(linear_form(&prim, frame));
            }
            integrals
        }
        LinearSolution::NoSolution => return Err(fail("kernel system is inconsistent")),
    };
    let pivots = right_to_left_pivots(rows, n);
    Ok((integrals, pivots))
}

fn is_polynomial_in(e: &Expr, frame: &BTreeSet<Symbol>) -> bool {
    let frame_free = |x: &Expr| x.free_vars().iter().all(|v| !frame.contains(v));
    match e {
        Expr::Num(_) | Expr::Var(_) => true,
        Expr::Add(ts) => ts.iter().all(|t| is_polynomial_in(t, frame)),
        Expr::Mul(fs) => fs.iter().all(|f| is_polynomial_in(f, frame)),
        Expr::Neg(inner) => is_polynomial_in(inner, frame),
        Expr::Pow(b, k) => {
            if *k >= 0 {
                is_polynomial_in(b, frame)
            } else {
                frame_free(b)
            }
        }
        Expr::Div(num, den) => is_polynomial_in(num, frame) && frame_free(den),
        Expr::Apply(_, arg) => frame_free(arg),
    }
}

/// Multi-indices with 1 <= total degree <= cap over `n` variables.
fn multi_indices(n: usize, cap: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut current = vec![0u32; n];
    fn rec(pos: usize, remaining: u32, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if pos == current.len() {
            if current.iter().any(|&e| e > 0) {
                out.push(current.clone());
            }
            return;
        }
        for e in 0..=remaining {
            current[pos] = e;
            rec(pos + 1, remaining - e, current, out);
        }
        current[pos] = 0;
    }
    rec(0, cap, &mut current, &mut out);
    out
}

fn monomial(frame: &[Symbol], idx: &[u32]) -> Expr {
    let factors = frame
        .iter()
        .zip(idx)
        .filter(|(_, &e)| e > 0)
        .map(|(s, &e)| mk_pow(Expr::var(s), e as i32))
        .collect();
    mk_mul(factors)
}

/// Splits one expanded term into its frame-monomial part and the rest.
/// Fails when a frame variable is tangled in a non-monomial factor.
fn split_term(term: &Expr, frame: &BTreeSet<Symbol>) -> Option<(Expr, Expr)> {
    let in_frame = |x: &Expr| x.free_vars().iter().any(|v| frame.contains(v));
    let factors: Vec<Expr> = match term {
        Expr::Mul(fs) => fs.to_vec(),
        Expr::Neg(inner) => match &**inner {
            Expr::Mul(fs) => {
                let mut v = vec![Expr::int(-1)];
                v.extend(fs.iter().cloned());
                v
            }
            other => vec![Expr::int(-1), other.clone()],
        },
        other => vec![other.clone()],
    };
    let mut frame_part = Vec::new();
    let mut rest = Vec::new();
    for f in factors {
        if !in_frame(&f) {
            rest.push(f);
            continue;
        }
        match &f {
            Expr::Var(_) => frame_part.push(f),
            Expr::Pow(b, k) if matches!(&**b, Expr::Var(_)) && *k > 0 => frame_part.push(f),
            _ => return None,
        }
    }
    Some((mk_mul(frame_part), mk_mul(rest)))
}

/// Groups an expression, affine in the ansatz unknowns, into one equation
/// per frame monomial.
fn coefficient_equations(e: &Expr, frame: &BTreeSet<Symbol>) -> Option<Vec<Expr>> {
    let (num, _den) = rationalize(e);
    if num.free_vars().is_empty() {
        return Some(Vec::new());
    }
    let expanded = expand(&num);
    let terms: Vec<Expr> = match &expanded {
        Expr::Add(ts) => ts.to_vec(),
        other => vec![other.clone()],
    };
    let mut groups: BTreeMap<Expr, Vec<Expr>> = BTreeMap::new();
    for t in &terms {
        let (key, rest) = split_term(t, frame)?;
        groups.entry(key).or_default().push(rest);
    }
    Some(groups.into_values().map(|parts| simplify(&mk_add(parts))).collect())
}

/// Polynomial case: first integrals as polynomials of bounded degree whose
/// derivative along every generator vanishes identically.
fn polynomial_integrals(
    gens: &[VectorField],
    frame: &[Symbol],
    degree_cap: u32,
) -> Result<Vec<Expr>, GeometryError> {
    let frame_set: BTreeSet<Symbol> = frame.iter().cloned().collect();

    // clear denominators so directional derivatives stay polynomial
    let mut cleared = Vec::with_capacity(gens.len());
    for g in gens {
        let mut dens: Vec<Expr> = Vec::new();
        for c in &g.coefficients {
            let (_, den) = rationalize(c);
            if !den.free_vars().iter().any(|v| frame_set.contains(v)) {
                continue;
            }
            if !dens.contains(&den) {
                dens.push(den);
            }
        }
        let scaled = if dens.is_empty() { g.clone() } else { g.scaled(&mk_mul(dens)) };
        if !scaled.coefficients.iter().all(|c| is_polynomial_in(c, &frame_set)) {
            return Err(fail("generators are not polynomial after clearing denominators"));
        }
        cleared.push(scaled);
    }

    let indices = multi_indices(frame.len(), degree_cap);
    let alpha: Vec<Symbol> = (0..indices.len()).map(|t| Symbol::new(&format!("_a{t}"))).collect();

    let mut equations = Vec::new();
    for g in &cleared {
        let terms: Vec<Expr> = indices
            .iter()
            .zip(&alpha)
            .map(|(idx, a)| mk_mul(vec![Expr::var(a), g.apply(&monomial(frame, idx))]))
            .collect();
        let derivative = simplify(&mk_add(terms));
        let eqs = coefficient_equations(&derivative, &frame_set)
            .ok_or_else(|| fail("derivative along a generator is not polynomial"))?;
        equations.extend(eqs);
    }

    let out = solve_linear_symbolic(&equations, &alpha, None)
        .map_err(|_| fail("ansatz conditions are not linear"))?;
    let basis = match out.solution {
        LinearSolution::NonUnique { basis, .. } => basis,
        _ => return Err(fail("no polynomial first integrals within the degree cap")),
    };

    let mut integrals = Vec::with_capacity(basis.len());
    for vec in &basis {
        let rationals: Option<Vec<BigRational>> =
            vec.iter().map(|e| e.as_rational().cloned()).collect();
        let scaled: Vec<Expr> = match rationals.and_then(|v| primitive_integer_vector(&v)) {
            Some(prim) => prim.into_iter().map(Expr::num).collect(),
            None => vec.clone(),
        };
        let terms = indices
            .iter()
            .zip(&scaled)
            .filter(|(_, c)| !c.is_zero_const())
            .map(|(idx, c)| mk_mul(vec![c.clone(), monomial(frame, idx)]))
            .collect();
        integrals.push(simplify(&mk_add(terms)));
    }
    Ok(integrals)
}

/// Greedy selection of `want` expressions with generically independent
/// differentials, starting from `selected`.
fn select_independent(
    candidates: &[Expr],
    selected: &mut Vec<Expr>,
    want: usize,
    frame: &[Symbol],
    base: &BTreeMap<Symbol, BigRational>,
    trials: usize,
    seed: u64,
) {
    for cand in candidates {
        if selected.len() == want {
            return;
        }
        let mut probe = selected.clone();
        probe.push(cand.clone());
        let jac = jacobian(&probe, frame);
        if generic_rank(&jac, frame, base, trials, seed) == Ok(probe.len()) {
            selected.push(cand.clone());
        }
    }
}

/// Builds the coordinate change straightening `d` into its last
/// coordinates. `fresh` provides the new coordinate names (one per frame
/// symbol); `base` must bind every frame symbol and parameter.
pub fn straighten(
    d: &Distribution,
    fresh: &[Symbol],
    base: &BTreeMap<Symbol, BigRational>,
    seed: u64,
    trials: usize,
    degree_cap: u32,
) -> Result<Transformation, GeometryError> {
    let frame = &d.frame;
    let n = frame.len();
    assert_eq!(fresh.len(), n, "one fresh name per coordinate");

    let r = d.generic_dimension(base, trials, seed)?;
    let gens: Vec<VectorField> = d.generators.iter().map(normalize_generator).collect();

    let (integrals, complements) = if r == 0 {
        // nothing to straighten: keep every coordinate as an integral
        ((0..n).map(|i| Expr::var(&frame[i])).collect::<Vec<_>>(), Vec::new())
    } else if r == n {
        // the distribution already spans the whole tangent space: no first
        // integrals exist and the identity chart straightens it
        (Vec::new(), (0..n).collect::<Vec<_>>())
    } else if let Some(rows) = as_rational_matrix(&gens) {
        let (integrals, pivots) = constant_straightening(&rows, frame)?;
        (integrals, pivots)
    } else {
        let candidates = polynomial_integrals(&gens, frame, degree_cap)?;
        let mut integrals = Vec::new();
        select_independent(&candidates, &mut integrals, n - r, frame, base, trials, seed);
        if integrals.len() != n - r {
            return Err(fail("not enough independent polynomial first integrals"));
        }
        // complements: coordinates completing the integrals to a chart,
        // scanned right to left
        let mut pivots = Vec::new();
        for idx in (0..n).rev() {
            if pivots.len() == r {
                break;
            }
            let mut probe: Vec<Expr> = integrals.clone();
            probe.extend(pivots.iter().map(|&p| Expr::var(&frame[p])));
            probe.push(Expr::var(&frame[idx]));
            let jac = jacobian(&probe, frame);
            if generic_rank(&jac, frame, base, trials, seed) == Ok(probe.len()) {
                pivots.push(idx);
            }
        }
        if pivots.len() != r {
            return Err(fail("could not complete the integrals to a coordinate chart"));
        }
        pivots.sort_unstable();
        (integrals, pivots)
    };

    let mut forward_exprs: Vec<Expr> = integrals;
    forward_exprs.extend(complements.iter().map(|&i| Expr::var(&frame[i])));
    if forward_exprs.len() != n {
        return Err(fail("integral count does not match the codimension"));
    }
    let forward: Vec<(Symbol, Expr)> =
        fresh.iter().cloned().zip(forward_exprs.iter().cloned()).collect();

    // invert the change of coordinates
    let equations: Vec<Expr> = forward
        .iter()
        .map(|(sym, expr)| mk_sub(Expr::var(sym), expr.clone()))
        .collect();
    let solved = solve_cascade(&equations, frame);
    if !solved.residual.is_empty() || solved.solutions.len() != n {
        return Err(fail("coordinate change could not be inverted in closed form"));
    }
    let inverse: Vec<(Symbol, Expr)> =
        frame.iter().map(|s| (s.clone(), simplify(&solved.solutions[s]))).collect();

    let t = Transformation {
        new_names: fresh.to_vec(),
        targets: fresh[n - r..].to_vec(),
        forward,
        inverse,
        assumptions: solved.assumptions,
    };

    // pivots must stay alive at the image of the base point
    let image = t.image_point(base).ok_or_else(|| fail("base point has no exact image"))?;
    for a in &t.assumptions {
        let alive = match eval_exact_rational(a, &image) {
            Ok(v) => !v.is_zero(),
            Err(_) => matches!(evaluate(a, &value_point(&image)), Ok(v) if v.abs() > 1e-9),
        };
        if !alive {
            return Err(fail("an inversion pivot vanishes at the base point"));
        }
    }

    if r > 0 && !verify_straightening(d, &t, base, seed, trials) {
        return Err(fail("transformed generators do not align with the target fields"));
    }
    Ok(t)
}

/// Exact check that the transformation straightens `d`: each transformed
/// generator must vanish on the non-target coordinates, and the target
/// block must have the distribution's full generic rank.
pub fn verify_straightening(
    d: &Distribution,
    t: &Transformation,
    base: &BTreeMap<Symbol, BigRational>,
    seed: u64,
    trials: usize,
) -> bool {
    let inverse = t.inverse_map();
    let target_set: BTreeSet<&Symbol> = t.targets.iter().collect();
    let mut target_block: Vec<Vec<Expr>> = Vec::new();
    for g in &d.generators {
        let mut target_coeffs = Vec::new();
        for (sym, fwd) in &t.forward {
            let coeff = cancel_quotient(&substitute(&g.apply(fwd), &inverse));
            if target_set.contains(sym) {
                target_coeffs.push(coeff);
            } else if !is_zero(&coeff) {
                return false;
            }
        }
        target_block.push(target_coeffs);
    }
    let Ok(r) = d.generic_dimension(base, trials, seed) else {
        return false;
    };
    if r == 0 {
        return true;
    }
    let Some(image) = t.image_point(base) else {
        return false;
    };
    generic_rank(&target_block, &t.new_names, &image, trials, seed) == Ok(r)
}
