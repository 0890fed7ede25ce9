//! Adapted coordinates on the extended space: the state update images
//! together with m fibre functions picked from the coordinates, giving a
//! symbolically invertible change of variables.

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::Zero;

use crate::symbolic::calculus::{eval_exact_rational, evaluate, substitute};
use crate::symbolic::expr::{mk_sub, Expr, Symbol};
use crate::symbolic::normal::cancel_quotient;
use crate::symbolic::rank::generic_rank;
use crate::symbolic::solve_triangular;
use crate::system::DiscreteSystem;

use super::{jacobian, value_point, GeometryError, VectorField};

/// Invertible coordinates (x⁺, ξ) on the extended space, with the forward
/// and inverse substitution maps and the pivots assumed nonzero while
/// inverting.
#[derive(Clone, Debug)]
pub struct AdaptedChart {
    /// Fibre functions in base coordinates, one per input.
    pub h: Vec<Expr>,
    /// Fibre coordinate symbols.
    pub xi: Vec<Symbol>,
    /// Shifted state symbols x@1.
    pub plus: Vec<Symbol>,
    /// Base coordinates (states then inputs).
    pub base: Vec<Symbol>,
    /// chart symbol -> expression in base coordinates.
    pub forward: Vec<(Symbol, Expr)>,
    /// base symbol -> expression in chart coordinates.
    pub inverse: Vec<(Symbol, Expr)>,
    /// Expressions in chart coordinates assumed nonzero by the inverse.
    pub pivot_assumptions: Vec<Expr>,
}

impl AdaptedChart {
    /// Chart symbols in frame order: shifted states first, then fibres.
    pub fn chart_symbols(&self) -> Vec<Symbol> {
        self.plus.iter().chain(self.xi.iter()).cloned().collect()
    }

    pub fn forward_map(&self) -> BTreeMap<Symbol, Expr> {
        self.forward.iter().cloned().collect()
    }

    pub fn inverse_map(&self) -> BTreeMap<Symbol, Expr> {
        self.inverse.iter().cloned().collect()
    }

    /// Rewrites a chart-coordinate expression in base coordinates.
    pub fn to_base(&self, e: &Expr) -> Expr {
        cancel_quotient(&substitute(e, &self.forward_map()))
    }

    /// Exact chart image of a base-space point, merged over the input point
    /// so parameters and base values stay bound.
    pub fn image_point(
        &self,
        point: &BTreeMap<Symbol, BigRational>,
    ) -> Option<BTreeMap<Symbol, BigRational>> {
        let mut out = point.clone();
        for (sym, expr) in &self.forward {
            let val = eval_exact_rational(expr, point).ok()?;
            out.insert(sym.clone(), val);
        }
        Some(out)
    }
}

fn fibre_names(sys: &DiscreteSystem, m: usize) -> Vec<Symbol> {
    let taken: Vec<&str> = sys
        .states
        .iter()
        .chain(sys.inputs.iter())
        .map(|s| s.base())
        .chain(sys.params.keys().map(|p| p.base()))
        .collect();
    for prefix in ["xi", "zeta", "eta"] {
        let names: Vec<String> = (1..=m).map(|j| format!("{prefix}{j}")).collect();
        if names.iter().all(|n| !taken.contains(&n.as_str())) {
            return names.iter().map(|n| Symbol::new(n)).collect();
        }
    }
    (1..=m).map(|j| Symbol::new(&format!("fib{j}"))).collect()
}

pub(crate) fn combinations(pool: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k == 0 || k > pool {
        return out;
    }
    loop {
        out.push(idx.clone());
        // advance to the next lexicographic combination
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + pool - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in (i + 1)..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Whether `a` evaluates to something nonzero at `point`; exact first, then
/// floating point for entries with non-rational atoms.
fn nonzero_at(a: &Expr, point: &BTreeMap<Symbol, BigRational>) -> bool {
    match eval_exact_rational(a, point) {
        Ok(v) => !v.is_zero(),
        Err(_) => match evaluate(a, &value_point(point)) {
            Ok(v) => v.abs() > 1e-9,
            Err(_) => false,
        },
    }
}

fn try_candidate(
    sys: &DiscreteSystem,
    fibre: &[Symbol],
    xi: &[Symbol],
    plus: &[Symbol],
    seed: u64,
    trials: usize,
) -> Option<AdaptedChart> {
    let coords = sys.coords();
    let h: Vec<Expr> = fibre.iter().map(Expr::var).collect();

    // generic regularity of the stacked Jacobian of (f, h)
    let stacked: Vec<Expr> = sys.updates.iter().chain(h.iter()).cloned().collect();
    let jac = jacobian(&stacked, &coords);
    let full = coords.len();
    match generic_rank(&jac, &coords, &sys.base_point(), trials, seed) {
        Ok(r) if r == full => {}
        _ => return None,
    }

    // symbolic inversion: solve x@1 = f(x,u), xi = h(x,u) for (x,u)
    let mut equations = Vec::with_capacity(full);
    for (p, f) in plus.iter().zip(&sys.updates) {
        equations.push(mk_sub(Expr::var(p), f.clone()));
    }
    for (x, hh) in xi.iter().zip(&h) {
        equations.push(mk_sub(Expr::var(x), hh.clone()));
    }
    let solved = solve_triangular(&equations, &coords);
    if !solved.residual.is_empty() || !solved.pending.is_empty() || solved.solutions.len() != full {
        return None;
    }

    // every pivot must stay alive at the chart image of the equilibrium
    let forward: Vec<(Symbol, Expr)> = plus
        .iter()
        .zip(&sys.updates)
        .map(|(p, f)| (p.clone(), f.clone()))
        .chain(xi.iter().zip(&h).map(|(s, hh)| (s.clone(), hh.clone())))
        .collect();
    let chart = AdaptedChart {
        h: h.clone(),
        xi: xi.to_vec(),
        plus: plus.to_vec(),
        base: coords.clone(),
        forward,
        inverse: coords
            .iter()
            .map(|c| (c.clone(), cancel_quotient(&solved.solutions[c])))
            .collect(),
        pivot_assumptions: solved.assumptions.clone(),
    };
    let image = chart.image_point(&sys.base_point())?;
    if !chart.pivot_assumptions.iter().all(|a| nonzero_at(a, &image)) {
        return None;
    }
    Some(chart)
}

/// Builds adapted coordinates for the system. The fibre functions are the
/// first (inputs-first, lexicographic) size-m coordinate subset that makes
/// the chart generically regular, symbolically invertible, and keeps every
/// inversion pivot nonzero at the equilibrium image. `preferred` pins the
/// fibre coordinates instead of searching.
pub fn build_adapted_chart(
    sys: &DiscreteSystem,
    seed: u64,
    trials: usize,
    preferred: Option<&[Symbol]>,
) -> Result<AdaptedChart, GeometryError> {
    let m = sys.m();
    let xi = fibre_names(sys, m);
    let plus: Vec<Symbol> = sys.states.iter().map(|s| s.shifted(1)).collect();

    if let Some(fibre) = preferred {
        assert_eq!(fibre.len(), m, "need one fibre coordinate per input");
        return try_candidate(sys, fibre, &xi, &plus, seed, trials)
            .ok_or(GeometryError::InversionFailed { tried: 1 });
    }

    let pool: Vec<Symbol> = sys.inputs.iter().chain(sys.states.iter()).cloned().collect();
    let mut tried = 0usize;
    for subset in combinations(pool.len(), m) {
        tried += 1;
        let fibre: Vec<Symbol> = subset.iter().map(|&i| pool[i].clone()).collect();
        if let Some(chart) = try_candidate(sys, &fibre, &xi, &plus, seed, trials) {
            return Ok(chart);
        }
    }
    Err(GeometryError::InversionFailed { tried })
}

/// Rewrites a vector field on the base coordinates in chart components:
/// the coefficient along each chart coordinate is the field applied to the
/// forward expression, pulled back through the inverse map.
pub fn express_in_chart(v: &VectorField, chart: &AdaptedChart) -> VectorField {
    assert_eq!(v.frame, chart.base, "field must live on the chart's base frame");
    let inverse = chart.inverse_map();
    let coefficients = chart
        .forward
        .iter()
        .map(|(_, fwd)| cancel_quotient(&substitute(&v.apply(fwd), &inverse)))
        .collect();
    VectorField { frame: chart.chart_symbols(), coefficients }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::expr::simplify;
    use crate::symbolic::parse::parse_any;
    use crate::system::test_fixtures::{academic, robot_exact};

    #[test]
    fn lexicographic_combinations() {
        assert_eq!(combinations(4, 2), vec![
            vec![0, 1],
            vec![0, 2],
            vec![0, 3],
            vec![1, 2],
            vec![1, 3],
            vec![2, 3],
        ]);
        assert_eq!(combinations(2, 2), vec![vec![0, 1]]);
        assert!(combinations(1, 2).is_empty());
    }

    #[test]
    fn default_chart_skips_singular_and_dead_pivot_choices() {
        let sys = academic();
        let chart = build_adapted_chart(&sys, 42, 8, None).unwrap();
        // (u1,u2) is singular (third update has no state dependence in its
        // row), (u1,x1) dies at the equilibrium, (u1,x2) does not invert
        // triangularly, so (u1,x3) wins.
        assert_eq!(chart.h, vec![parse_any("u1").unwrap(), parse_any("x3").unwrap()]);
        for (sym, expr) in &chart.inverse {
            // the inverse map really inverts: substituting the forward map
            // into each inverse expression returns the original coordinate
            let back = chart.to_base(expr);
            assert!(
                crate::symbolic::normal::equivalent(&back, &Expr::var(sym)),
                "inverse of {sym} reproduces {back}"
            );
        }
    }

    #[test]
    fn preferred_fibre_choice_reproduces_the_textbook_chart() {
        let sys = academic();
        let pref = [Symbol::new("x1"), Symbol::new("x3")];
        let chart = build_adapted_chart(&sys, 42, 8, Some(&pref)).unwrap();
        assert_eq!(chart.h, vec![parse_any("x1").unwrap(), parse_any("x3").unwrap()]);
        let inv = chart.inverse_map();
        assert_eq!(inv[&Symbol::new("x1")], parse_any("xi1").unwrap());
        assert_eq!(inv[&Symbol::new("x3")], parse_any("xi2").unwrap());
    }

    #[test]
    fn input_fields_in_the_textbook_chart() {
        let sys = academic();
        let pref = [Symbol::new("x1"), Symbol::new("x3")];
        let chart = build_adapted_chart(&sys, 42, 8, Some(&pref)).unwrap();
        let coords = sys.coords();
        let du1 = VectorField::coordinate(coords.clone(), &Symbol::new("u1"));
        let w1 = express_in_chart(&du1, &chart);
        assert_eq!(
            w1.to_string(),
            "-x1@1/(x3@1+1)*d_x1@1 + xi1*(xi2+1)*d_x2@1 + d_x3@1"
        );
        let du2 = VectorField::coordinate(coords, &Symbol::new("u2"));
        let w2 = express_in_chart(&du2, &chart);
        assert_eq!(
            w2.coefficient_of(&Symbol::new("x1").shifted(1)).unwrap().clone(),
            parse_any("-2*x1@1/(x3@1+1)").unwrap()
        );
        assert_eq!(
            w2.coefficient_of(&Symbol::new("x2").shifted(1)).unwrap().clone(),
            parse_any("2*xi1*(xi2+1)-3").unwrap()
        );
        assert_eq!(
            w2.coefficient_of(&Symbol::new("x4").shifted(1)).unwrap().clone(),
            Expr::one()
        );
    }

    #[test]
    fn trigonometric_chart_for_the_robot() {
        let sys = robot_exact();
        let pref = [Symbol::new("x3"), Symbol::new("u1")];
        let chart = build_adapted_chart(&sys, 42, 8, Some(&pref)).unwrap();
        let du1 = VectorField::coordinate(sys.coords(), &Symbol::new("u1"));
        let w1 = express_in_chart(&du1, &chart);
        let gamma = parse_any("(x3@1+xi1)/2").unwrap();
        assert_eq!(
            w1.coefficient_of(&Symbol::new("x1").shifted(1)).unwrap().clone(),
            simplify(&crate::symbolic::expr::mk_apply(crate::symbolic::Func::Cos, gamma.clone()))
        );
        assert_eq!(
            w1.coefficient_of(&Symbol::new("x2").shifted(1)).unwrap().clone(),
            simplify(&crate::symbolic::expr::mk_apply(crate::symbolic::Func::Sin, gamma))
        );
        assert_eq!(w1.coefficient_of(&Symbol::new("xi2")).unwrap().clone(), Expr::one());
    }

    #[test]
    fn default_robot_chart_uses_both_inputs() {
        let sys = robot_exact();
        let chart = build_adapted_chart(&sys, 42, 8, None).unwrap();
        assert_eq!(chart.h, vec![parse_any("u1").unwrap(), parse_any("u2").unwrap()]);
        assert!(chart.pivot_assumptions.is_empty());
    }

    #[test]
    fn single_state_chart_uses_the_state() {
        // x+ = u has a singular (u) fibre choice; x works
        use crate::system::DiscreteSystem;
        let sys = DiscreteSystem {
            name: "integrator".into(),
            states: vec![Symbol::new("x")],
            inputs: vec![Symbol::new("u")],
            updates: vec![parse_any("u").unwrap()],
            equilibrium: [(Symbol::new("x"), BigRational::zero()), (Symbol::new("u"), BigRational::zero())]
                .into_iter()
                .collect(),
            params: BTreeMap::new(),
        };
        let chart = build_adapted_chart(&sys, 42, 8, None).unwrap();
        assert_eq!(chart.h, vec![parse_any("x").unwrap()]);
    }
}
