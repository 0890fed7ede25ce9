//! Projectable subdistributions of the input distribution, pushforwards
//! along the update map, and the f-relatedness check.

use std::collections::BTreeMap;

use num_rational::BigRational;

use crate::symbolic::calculus::{differentiate, substitute};
use crate::symbolic::expr::{mk_add, mk_mul, mk_sub, simplify, Expr, Symbol};
use crate::symbolic::linsolve::{solve_linear_symbolic, LinearSolution};
use crate::symbolic::normal::{cancel_quotient, collapse, is_zero};
use crate::symbolic::rank::{generic_rank, Sampler};
use crate::system::DiscreteSystem;

use super::chart::{express_in_chart, AdaptedChart};
use super::{
    is_involutive, normalize_generator, value_point, Distribution, GeometryError, VectorField,
};

fn pivot_columns(
    a: &[Vec<Expr>],
    chart_syms: &[Symbol],
    image: &BTreeMap<Symbol, BigRational>,
    trials: usize,
    seed: u64,
) -> Option<Vec<usize>> {
    let m = a.len();
    let n = a[0].len();
    for subset in super::chart::combinations(n, m) {
        let sub: Vec<Vec<Expr>> = a
            .iter()
            .map(|row| subset.iter().map(|&c| row[c].clone()).collect())
            .collect();
        if generic_rank(&sub, chart_syms, image, trials, seed) == Ok(m) {
            return Some(subset);
        }
    }
    None
}

/// Rows of M⁻¹ for the m×m block of `a` at the pivot columns, solved
/// symbolically one row at a time.
fn invert_block(
    a: &[Vec<Expr>],
    pivots: &[usize],
    reference: &BTreeMap<Symbol, crate::symbolic::Value>,
) -> Option<Vec<Vec<Expr>>> {
    let m = a.len();
    let unknowns: Vec<Symbol> = (0..m).map(|l| Symbol::new(&format!("_q{l}"))).collect();
    let mut inv = Vec::with_capacity(m);
    for k in 0..m {
        // row_k · M = e_k, written per column as Σ_l q_l · M[l][col] = δ_{k,col}
        let mut equations = Vec::with_capacity(m);
        for (col, &pc) in pivots.iter().enumerate() {
            let mut terms: Vec<Expr> = (0..m)
                .map(|l| mk_mul(vec![Expr::var(&unknowns[l]), a[l][pc].clone()]))
                .collect();
            if col == k {
                terms.push(Expr::int(-1));
            }
            equations.push(mk_add(terms));
        }
        match solve_linear_symbolic(&equations, &unknowns, Some(reference)) {
            Ok(out) => match out.solution {
                LinearSolution::Unique(sol) => {
                    inv.push(unknowns.iter().map(|u| cancel_quotient(&sol[u])).collect());
                }
                _ => return None,
            },
            Err(_) => return None,
        }
    }
    Some(inv)
}

/// Searches span{∂u} for the largest subdistribution whose pushforward is
/// Outcome of the projectable-subdistribution search: either a nonempty
/// involutive projectable distribution, or proof that none exists.
#[derive(Debug, Clone)]
pub enum ProjectableSearch {
    /// A projectable involutive subdistribution, together with the number of
    /// generators discarded to restore involutivity.
    Found { distribution: Distribution, dropped: usize },
    /// Only the zero combination satisfies the projectability conditions;
    /// the conditions themselves form the certificate.
    Empty { conditions: Vec<Expr> },
}

/// well defined: combinations Σ c_k(x⁺)·v̄_k of the normalized input fields
/// whose base-direction coefficients are free of the fibre coordinates.
///
/// The linear conditions on the c are solved on a stack of fibre
/// instantiations; an empty instantiated null space rules out every
/// candidate exactly, while surviving basis vectors are kept only if they
/// satisfy the un-instantiated equations symbolically.
pub fn find_projectable_subdistribution(
    sys: &DiscreteSystem,
    chart: &AdaptedChart,
    seed: u64,
    trials: usize,
    one_dim: bool,
) -> Result<ProjectableSearch, GeometryError> {
    let n = sys.n();
    let m = sys.m();
    let coords = sys.coords();
    let chart_syms = chart.chart_symbols();

    let fields: Vec<VectorField> = sys
        .inputs
        .iter()
        .map(|u| express_in_chart(&VectorField::coordinate(coords.clone(), u), chart))
        .collect();
    let a: Vec<Vec<Expr>> = fields.iter().map(|w| w.coefficients[..n].to_vec()).collect();

    let image = chart
        .image_point(&sys.base_point())
        .ok_or(GeometryError::ProjectabilityUnresolved)?;
    let reference = value_point(&image);

    let pivots = pivot_columns(&a, &chart_syms, &image, trials, seed)
        .ok_or(GeometryError::ProjectabilityUnresolved)?;
    let minv =
        invert_block(&a, &pivots, &reference).ok_or(GeometryError::ProjectabilityUnresolved)?;

    // normalized base-direction rows ā = M⁻¹ a, identity on the pivot block
    let abar: Vec<Vec<Expr>> = (0..m)
        .map(|k| {
            (0..n)
                .map(|i| {
                    let terms =
                        (0..m).map(|l| mk_mul(vec![minv[k][l].clone(), a[l][i].clone()])).collect();
                    cancel_quotient(&mk_add(terms))
                })
                .collect()
        })
        .collect();

    let c_syms: Vec<Symbol> = (0..m).map(|k| Symbol::new(&format!("_c{k}"))).collect();
    let mut equations = Vec::new();
    for i in 0..n {
        if pivots.contains(&i) {
            continue;
        }
        for xi in &chart.xi {
            let terms: Vec<Expr> = (0..m)
                .map(|k| mk_mul(vec![Expr::var(&c_syms[k]), differentiate(&abar[k][i], xi)]))
                .collect();
            let eq = simplify(&mk_add(terms));
            if !eq.is_zero_const() {
                equations.push(eq);
            }
        }
    }

    let verified = solve_projectability(&equations, &c_syms, chart, &image, &reference, seed)?;
    let Some(coefficient_sets) = verified else {
        return Ok(ProjectableSearch::Empty { conditions: equations });
    };

    // map each verified combination back to an input-direction field on the
    // original coordinates: coefficient of ∂u_l is Σ_k c_k·(M⁻¹)_{k,l}
    let mut generators = Vec::with_capacity(coefficient_sets.len());
    for cs in &coefficient_sets {
        let mut coefficients = vec![Expr::zero(); n];
        for l in 0..m {
            let terms =
                (0..m).map(|k| mk_mul(vec![cs[k].clone(), minv[k][l].clone()])).collect();
            coefficients.push(chart.to_base(&mk_add(terms)));
        }
        generators.push(normalize_generator(&VectorField::new(coords.clone(), coefficients)));
    }
    if one_dim {
        generators.truncate(1);
    }

    let base_ref = value_point(&sys.base_point());
    let mut d = Distribution::new(coords, generators);
    let before = d.generators.len();
    while d.generators.len() > 1 && !is_involutive(&d, Some(&base_ref)) {
        d.generators.pop();
    }
    let dropped = before - d.generators.len();
    Ok(ProjectableSearch::Found { distribution: d, dropped })
}

/// Hybrid null-space computation for the projectability conditions.
/// Returns Ok(None) when only the zero combination works; otherwise the
/// symbolically verified coefficient vectors.
fn solve_projectability(
    equations: &[Expr],
    c_syms: &[Symbol],
    chart: &AdaptedChart,
    image: &BTreeMap<Symbol, BigRational>,
    reference: &BTreeMap<Symbol, crate::symbolic::Value>,
    seed: u64,
) -> Result<Option<Vec<Vec<Expr>>>, GeometryError> {
    let d = chart.xi.len();
    for round in 0..3u64 {
        let mut sampler = Sampler::new(image.clone(), seed.wrapping_add(round.wrapping_mul(0x9E3779B97F4A7C15)));
        let mut points: Vec<Vec<BigRational>> = Vec::new();
        let mut binds_list: Vec<BTreeMap<Symbol, Expr>> = Vec::new();
        let mut attempts = 0;
        while points.len() < d + 1 && attempts < 20 * (d + 1) {
            attempts += 1;
            let pt = sampler.point(&chart.xi);
            let vals: Vec<BigRational> = chart.xi.iter().map(|s| pt[s].clone()).collect();
            if points.contains(&vals) {
                continue;
            }
            let binds = chart
                .xi
                .iter()
                .map(|s| (s.clone(), Expr::num(pt[s].clone())))
                .collect();
            points.push(vals);
            binds_list.push(binds);
        }

        let mut stacked = Vec::with_capacity(equations.len() * binds_list.len());
        for binds in &binds_list {
            for eq in equations {
                let inst = simplify(&substitute(eq, binds));
                if !inst.is_zero_const() {
                    stacked.push(inst);
                }
            }
        }

        let out = solve_linear_symbolic(&stacked, c_syms, Some(reference))
            .map_err(|_| GeometryError::ProjectabilityUnresolved)?;
        match out.solution {
            LinearSolution::Unique(sol) => {
                if c_syms.iter().all(|c| is_zero(&sol[c])) {
                    return Ok(None);
                }
                return Err(GeometryError::ProjectabilityUnresolved);
            }
            LinearSolution::NoSolution => return Err(GeometryError::ProjectabilityUnresolved),
            LinearSolution::NonUnique { basis, .. } => {
                let mut verified: Vec<Vec<Expr>> = Vec::new();
                for cand in &basis {
                    let binds: BTreeMap<Symbol, Expr> =
                        c_syms.iter().cloned().zip(cand.iter().cloned()).collect();
                    let ok = equations.iter().all(|eq| is_zero(&substitute(eq, &binds)));
                    if ok {
                        verified.push(cand.clone());
                    }
                }
                if verified.len() == basis.len() {
                    return Ok(Some(verified));
                }
                if round == 2 {
                    // sound but possibly sub-maximal
                    if !verified.is_empty() {
                        return Ok(Some(verified));
                    }
                    return Err(GeometryError::ProjectabilityUnresolved);
                }
            }
        }
    }
    Err(GeometryError::ProjectabilityUnresolved)
}

/// Image of a projectable distribution under the update map: the
/// base-direction part of each generator in chart coordinates, which must
/// not depend on the fibre coordinates.
pub fn pushforward(
    d: &Distribution,
    sys: &DiscreteSystem,
    chart: &AdaptedChart,
) -> Result<Distribution, GeometryError> {
    let n = sys.n();
    let mut generators = Vec::with_capacity(d.generators.len());
    for g in &d.generators {
        let w = express_in_chart(g, chart);
        let mut coefficients = Vec::with_capacity(n);
        for c in w.coefficients.iter().take(n) {
            let fibre_free = chart.xi.iter().all(|xi| is_zero(&differentiate(c, xi)));
            if !fibre_free {
                return Err(GeometryError::NotProjectable { coefficient: c.clone() });
            }
            // the coefficient is constant along the fibres, but the raw form may
            // still mention them; canonicalize and pin any leftover occurrence
            let mut c = collapse(c);
            if chart.xi.iter().any(|xi| c.contains(xi)) {
                let pin: BTreeMap<Symbol, Expr> =
                    chart.xi.iter().map(|xi| (xi.clone(), Expr::zero())).collect();
                c = collapse(&substitute(&c, &pin));
            }
            coefficients.push(c);
        }
        generators.push(VectorField::new(chart.plus.clone(), coefficients));
    }
    Ok(Distribution::new(chart.plus.clone(), generators))
}

/// Whether `w` (on the shifted states) is the image of `v` (on states and
/// inputs) along the update map: w^i ∘ f = v(f^i) for every state.
pub fn check_f_related(v: &VectorField, w: &VectorField, sys: &DiscreteSystem) -> bool {
    let plus: Vec<Symbol> = sys.states.iter().map(|s| s.shifted(1)).collect();
    assert_eq!(w.frame, plus, "w must live on the shifted states");
    let subs: BTreeMap<Symbol, Expr> =
        plus.iter().cloned().zip(sys.updates.iter().cloned()).collect();
    for (wi, fi) in w.coefficients.iter().zip(&sys.updates) {
        let lhs = substitute(wi, &subs);
        let rhs = v.apply(fi);
        if !is_zero(&mk_sub(lhs, rhs)) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::super::{build_adapted_chart, span_equal};
    use super::*;
    use crate::symbolic::parse::parse_any;
    use crate::system::test_fixtures::{academic, robot_euler, robot_exact};

    fn field(frame: Vec<Symbol>, coeffs: &[&str]) -> VectorField {
        VectorField::new(frame, coeffs.iter().map(|c| parse_any(c).unwrap()).collect())
    }

    fn found(out: ProjectableSearch) -> Distribution {
        match out {
            ProjectableSearch::Found { distribution, .. } => distribution,
            ProjectableSearch::Empty { .. } => panic!("expected a projectable subdistribution"),
        }
    }

    #[test]
    fn academic_first_step_has_a_unique_projectable_line() {
        let sys = academic();
        let pref = [Symbol::new("x1"), Symbol::new("x3")];
        let chart = build_adapted_chart(&sys, 42, 8, Some(&pref)).unwrap();
        let d = found(find_projectable_subdistribution(&sys, &chart, 42, 8, false).unwrap());
        assert_eq!(d.generators.len(), 1);
        let expected = Distribution::new(
            sys.coords(),
            vec![field(sys.coords(), &["0", "0", "0", "0", "-2", "1"])],
        );
        assert!(span_equal(&d, &expected, None));
        // and the result is chart independent
        let default_chart = build_adapted_chart(&sys, 42, 8, None).unwrap();
        let d2 = found(find_projectable_subdistribution(&sys, &default_chart, 42, 8, false).unwrap());
        assert!(span_equal(&d2, &expected, None));
    }

    #[test]
    fn academic_pushforward_matches_by_hand_image() {
        let sys = academic();
        let pref = [Symbol::new("x1"), Symbol::new("x3")];
        let chart = build_adapted_chart(&sys, 42, 8, Some(&pref)).unwrap();
        let d = Distribution::new(
            sys.coords(),
            vec![field(sys.coords(), &["0", "0", "0", "0", "2", "-1"])],
        );
        let fd = pushforward(&d, &sys, &chart).unwrap();
        let plus: Vec<Symbol> = sys.states.iter().map(|s| s.shifted(1)).collect();
        let expected =
            Distribution::new(plus.clone(), vec![field(plus, &["0", "-3", "0", "1"])]);
        assert!(span_equal(&fd, &expected, None));
    }

    #[test]
    fn non_projectable_field_is_rejected_by_pushforward() {
        let sys = academic();
        let pref = [Symbol::new("x1"), Symbol::new("x3")];
        let chart = build_adapted_chart(&sys, 42, 8, Some(&pref)).unwrap();
        let d = Distribution::new(
            sys.coords(),
            vec![field(sys.coords(), &["0", "0", "0", "0", "1", "0"])],
        );
        assert!(matches!(
            pushforward(&d, &sys, &chart),
            Err(GeometryError::NotProjectable { .. })
        ));
    }

    #[test]
    fn exact_robot_discretization_has_no_projectable_combination() {
        let sys = robot_exact();
        for pref in [None, Some([Symbol::new("x3"), Symbol::new("u1")])] {
            let chart = build_adapted_chart(&sys, 42, 8, pref.as_ref().map(|p| &p[..])).unwrap();
            let out = find_projectable_subdistribution(&sys, &chart, 42, 8, false).unwrap();
            match out {
                ProjectableSearch::Empty { conditions } => assert!(!conditions.is_empty()),
                ProjectableSearch::Found { .. } => {
                    panic!("chart {:?} must refute projectability", chart.h)
                }
            }
        }
    }

    #[test]
    fn euler_robot_keeps_the_second_input_direction() {
        let sys = robot_euler();
        let chart = build_adapted_chart(&sys, 42, 8, None).unwrap();
        let d = found(find_projectable_subdistribution(&sys, &chart, 42, 8, false).unwrap());
        let expected = Distribution::new(
            sys.coords(),
            vec![field(sys.coords(), &["0", "0", "0", "0", "1"])],
        );
        assert!(span_equal(&d, &expected, None));
    }

    #[test]
    fn full_input_distribution_when_already_decomposed() {
        // x+ = u: one state, one input, zero fibre equations
        use crate::system::DiscreteSystem;
        use num_traits::Zero;
        let sys = DiscreteSystem {
            name: "integrator".into(),
            states: vec![Symbol::new("x")],
            inputs: vec![Symbol::new("u")],
            updates: vec![parse_any("u").unwrap()],
            equilibrium: [
                (Symbol::new("x"), BigRational::zero()),
                (Symbol::new("u"), BigRational::zero()),
            ]
            .into_iter()
            .collect(),
            params: BTreeMap::new(),
        };
        let chart = build_adapted_chart(&sys, 42, 8, None).unwrap();
        let d = found(find_projectable_subdistribution(&sys, &chart, 42, 8, false).unwrap());
        assert_eq!(d.generators.len(), 1);
        assert_eq!(d.generators[0].coefficients[1], Expr::one());
    }

    #[test]
    fn update_map_relates_the_textbook_pair() {
        let sys = academic();
        let plus: Vec<Symbol> = sys.states.iter().map(|s| s.shifted(1)).collect();
        let v = field(
            sys.coords(),
            &["0", "0", "0", "0", "2*(x2+x3+3*x4)", "-(x2+x3+3*x4)"],
        );
        let w = field(
            plus.clone(),
            &["0", "3*x1@1*(x3@1+1)", "0", "-x1@1*(x3@1+1)"],
        );
        assert!(check_f_related(&v, &w, &sys));
        // a coordinate input field does not push to the zero field
        let v2 = field(sys.coords(), &["0", "0", "0", "0", "1", "0"]);
        let w0 = VectorField::zero(plus);
        assert!(!check_f_related(&v2, &w0, &sys));
    }
}
