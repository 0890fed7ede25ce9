//! Differential-geometric layer: vector fields and distributions on the
//! extended space of a discrete-time system, adapted coordinates, the
//! projectability test, pushforwards, involutivity, and straightening of
//! involutive distributions into coordinate form.

pub mod chart;
pub mod project;
pub mod straighten;

pub use chart::{build_adapted_chart, express_in_chart, AdaptedChart};
pub use project::{check_f_related, find_projectable_subdistribution, pushforward, ProjectableSearch};
pub use straighten::{straighten, verify_straightening, Transformation};

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::symbolic::calculus::{differentiate, Value};
use crate::symbolic::expr::{mk_add, mk_div, mk_mul, mk_neg, mk_sub, simplify, Expr, Symbol};
use crate::symbolic::linsolve::{solve_linear_symbolic, LinearSolution};
use crate::symbolic::normal::{cancel_quotient, collapse, is_zero, rationalize};
use crate::symbolic::rank::{generic_rank, RankError};

#[derive(Clone, Debug)]
pub enum GeometryError {
    /// No fibre-coordinate choice produced a symbolically invertible chart.
    InversionFailed { tried: usize },
    /// A generator kept fibre coordinates in its base-direction coefficients.
    NotProjectable { coefficient: Expr },
    /// The projectability null space could not be pinned down symbolically.
    ProjectabilityUnresolved,
    /// The distribution falls outside the supported straightening class.
    StraighteningFailed { reason: String },
    Rank(RankError),
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::InversionFailed { tried } => {
                write!(f, "no invertible adapted chart among {tried} candidate fibre choices")
            }
            GeometryError::NotProjectable { coefficient } => {
                write!(f, "generator is not projectable: coefficient `{coefficient}` keeps fibre coordinates")
            }
            GeometryError::ProjectabilityUnresolved => {
                write!(f, "projectable combinations could not be verified symbolically")
            }
            GeometryError::StraighteningFailed { reason } => {
                write!(f, "straightening failed: {reason}")
            }
            GeometryError::Rank(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for GeometryError {}

impl From<RankError> for GeometryError {
    fn from(e: RankError) -> Self {
        GeometryError::Rank(e)
    }
}

/// A vector field expressed in a coordinate frame: one coefficient per
/// frame symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VectorField {
    pub frame: Vec<Symbol>,
    pub coefficients: Vec<Expr>,
}

impl VectorField {
    pub fn new(frame: Vec<Symbol>, coefficients: Vec<Expr>) -> Self {
        assert_eq!(frame.len(), coefficients.len(), "one coefficient per frame symbol");
        VectorField { frame, coefficients }
    }

    pub fn zero(frame: Vec<Symbol>) -> Self {
        let coefficients = vec![Expr::zero(); frame.len()];
        VectorField { frame, coefficients }
    }

    /// The coordinate field along `sym` inside `frame`.
    pub fn coordinate(frame: Vec<Symbol>, sym: &Symbol) -> Self {
        let coefficients = frame
            .iter()
            .map(|s| if s == sym { Expr::one() } else { Expr::zero() })
            .collect();
        VectorField { frame, coefficients }
    }

    pub fn coefficient_of(&self, sym: &Symbol) -> Option<&Expr> {
        self.frame.iter().position(|s| s == sym).map(|i| &self.coefficients[i])
    }

    /// Directional derivative of `g` along the field.
    pub fn apply(&self, g: &Expr) -> Expr {
        let terms = self
            .frame
            .iter()
            .zip(&self.coefficients)
            .map(|(s, c)| mk_mul(vec![c.clone(), differentiate(g, s)]))
            .collect();
        simplify(&mk_add(terms))
    }

    pub fn is_zero_field(&self) -> bool {
        self.coefficients.iter().all(is_zero)
    }

    /// Rescaled copy: every coefficient multiplied by `factor`.
    pub fn scaled(&self, factor: &Expr) -> VectorField {
        let coefficients = self
            .coefficients
            .iter()
            .map(|c| simplify(&mk_mul(vec![factor.clone(), c.clone()])))
            .collect();
        VectorField { frame: self.frame.clone(), coefficients }
    }
}

impl fmt::Display for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut rendered: Vec<String> = Vec::new();
        for (s, c) in self.frame.iter().zip(&self.coefficients) {
            if c.is_zero_const() {
                continue;
            }
            let cs = c.to_string();
            let term = if cs == "1" {
                format!("d_{s}")
            } else if cs == "-1" {
                format!("-d_{s}")
            } else if matches!(c, Expr::Add(_)) {
                format!("({cs})*d_{s}")
            } else {
                format!("{cs}*d_{s}")
            };
            rendered.push(term);
        }
        if rendered.is_empty() {
            return write!(f, "0");
        }
        let mut out = String::new();
        for (i, t) in rendered.iter().enumerate() {
            if i == 0 {
                out.push_str(t);
            } else if let Some(tail) = t.strip_prefix('-') {
                out.push_str(" - ");
                out.push_str(tail);
            } else {
                out.push_str(" + ");
                out.push_str(t);
            }
        }
        write!(f, "{out}")
    }
}

/// A distribution given by generating vector fields over a common frame.
/// The dimension is the generic rank of the coefficient matrix; generators
/// are allowed to be dependent.
#[derive(Clone, Debug)]
pub struct Distribution {
    pub frame: Vec<Symbol>,
    pub generators: Vec<VectorField>,
}

impl Distribution {
    pub fn new(frame: Vec<Symbol>, generators: Vec<VectorField>) -> Self {
        for g in &generators {
            assert_eq!(g.frame, frame, "generator frame must match the distribution frame");
        }
        Distribution { frame, generators }
    }

    pub fn coefficient_matrix(&self) -> Vec<Vec<Expr>> {
        self.generators.iter().map(|g| g.coefficients.clone()).collect()
    }

    /// Generic rank of the coefficient matrix near `base`.
    pub fn generic_dimension(
        &self,
        base: &BTreeMap<Symbol, BigRational>,
        trials: usize,
        seed: u64,
    ) -> Result<usize, RankError> {
        if self.generators.is_empty() {
            return Ok(0);
        }
        generic_rank(&self.coefficient_matrix(), &self.frame, base, trials, seed)
    }
}

/// Jacobian matrix of `exprs` with respect to `vars`.
pub fn jacobian(exprs: &[Expr], vars: &[Symbol]) -> Vec<Vec<Expr>> {
    exprs
        .iter()
        .map(|e| vars.iter().map(|v| differentiate(e, v)).collect())
        .collect()
}

/// Coordinate Lie bracket [v1, v2]^i = v1(v2^i) − v2(v1^i).
pub fn lie_bracket(v1: &VectorField, v2: &VectorField) -> VectorField {
    assert_eq!(v1.frame, v2.frame, "bracket needs a common frame");
    let coefficients = v1
        .coefficients
        .iter()
        .zip(&v2.coefficients)
        .map(|(c1, c2)| simplify(&mk_sub(v1.apply(c2), v2.apply(c1))))
        .collect();
    VectorField { frame: v1.frame.clone(), coefficients }
}

/// Whether `v` lies in the span of `d`'s generators with function
/// coefficients: solves Σ c_k·gen_k = v symbolically.
pub fn in_span(v: &VectorField, d: &Distribution, reference: Option<&BTreeMap<Symbol, Value>>) -> bool {
    if v.is_zero_field() {
        return true;
    }
    if d.generators.is_empty() {
        return false;
    }
    let unknowns: Vec<Symbol> =
        (0..d.generators.len()).map(|k| Symbol::new(&format!("_m{k}"))).collect();
    let mut equations = Vec::with_capacity(d.frame.len());
    for (i, _) in d.frame.iter().enumerate() {
        let mut terms: Vec<Expr> = d
            .generators
            .iter()
            .zip(&unknowns)
            .map(|(g, c)| mk_mul(vec![Expr::var(c), g.coefficients[i].clone()]))
            .collect();
        terms.push(mk_neg(v.coefficients[i].clone()));
        equations.push(mk_add(terms));
    }
    match solve_linear_symbolic(&equations, &unknowns, reference) {
        Ok(out) => !matches!(out.solution, LinearSolution::NoSolution),
        Err(_) => false,
    }
}

/// Conservative involutivity check: every pairwise bracket must be proven to
/// lie in the generator span; anything unresolved counts as not involutive.
pub fn is_involutive(d: &Distribution, reference: Option<&BTreeMap<Symbol, Value>>) -> bool {
    for i in 0..d.generators.len() {
        for j in (i + 1)..d.generators.len() {
            let br = lie_bracket(&d.generators[i], &d.generators[j]);
            if br.is_zero_field() {
                continue;
            }
            if !in_span(&br, d, reference) {
                return false;
            }
        }
    }
    true
}

/// Mutual inclusion of generator spans.
pub fn span_equal(a: &Distribution, b: &Distribution, reference: Option<&BTreeMap<Symbol, Value>>) -> bool {
    a.generators.iter().all(|g| in_span(g, b, reference))
        && b.generators.iter().all(|g| in_span(g, a, reference))
}

fn big_gcd(mut a: BigInt, mut b: BigInt) -> BigInt {
    while !b.is_zero() {
        let r = &a % &b;
        a = b;
        b = r;
    }
    if a.is_negative() {
        -a
    } else {
        a
    }
}

/// Scales a rational vector to coprime integers with a positive leading
/// entry. Returns None for the zero vector.
pub(crate) fn primitive_integer_vector(vals: &[BigRational]) -> Option<Vec<BigRational>> {
    if vals.iter().all(|v| v.is_zero()) {
        return None;
    }
    let mut denom_lcm = BigInt::one();
    for v in vals {
        let d = v.denom();
        denom_lcm = &denom_lcm / big_gcd(denom_lcm.clone(), d.clone()) * d;
    }
    let ints: Vec<BigInt> = vals
        .iter()
        .map(|v| (v * BigRational::from_integer(denom_lcm.clone())).to_integer())
        .collect();
    let mut g = BigInt::zero();
    for i in &ints {
        g = big_gcd(g, i.clone());
    }
    let lead_negative = ints.iter().find(|i| !i.is_zero()).map(|i| i.is_negative()).unwrap_or(false);
    if lead_negative {
        g = -g;
    }
    Some(ints.into_iter().map(|i| BigRational::from_integer(i / &g)).collect())
}

/// Multiplies each row entry by the other entries' denominators, leaving a
/// polynomial-in-atoms row that spans the same line over the function field.
fn clear_denominators(row: &[Expr]) -> Vec<Expr> {
    let parts: Vec<(Expr, Expr)> = row.iter().map(|c| rationalize(&simplify(c))).collect();
    (0..row.len())
        .map(|j| {
            let mut fs = vec![parts[j].0.clone()];
            for (k, (_, den)) in parts.iter().enumerate() {
                if k != j {
                    fs.push(den.clone());
                }
            }
            collapse(&mk_mul(fs))
        })
        .collect()
}

/// Span-preserving Gauss reduction of the generator matrix over the field of
/// rational expressions: denominators are cleared, rows reduced against each
/// other fraction-free, dependent rows dropped, and the survivors rescaled.
/// The reduced generators keep sampling and straightening away from spurious
/// singularities that the raw combinations would drag in.
pub fn echelonize(d: &Distribution) -> Distribution {
    let mut rows: Vec<Vec<Expr>> = Vec::new();
    let mut pivots: Vec<usize> = Vec::new();
    for g in &d.generators {
        let mut row = clear_denominators(&g.coefficients);
        for (r, &pc) in rows.iter().zip(&pivots) {
            let c = row[pc].clone();
            if c.is_zero_const() {
                continue;
            }
            let p = r[pc].clone();
            row = row
                .iter()
                .zip(r)
                .map(|(a, b)| {
                    collapse(&mk_sub(
                        mk_mul(vec![p.clone(), a.clone()]),
                        mk_mul(vec![c.clone(), b.clone()]),
                    ))
                })
                .collect();
        }
        for entry in row.iter_mut() {
            if !entry.is_zero_const() && is_zero(entry) {
                *entry = Expr::zero();
            }
        }
        let Some(pc) = row.iter().position(|c| !c.is_zero_const()) else { continue };
        rows.push(clear_denominators(&row));
        pivots.push(pc);
    }
    for i in (0..rows.len()).rev() {
        let pc = pivots[i];
        let pivot_row = rows[i].clone();
        for k in 0..i {
            let c = rows[k][pc].clone();
            if c.is_zero_const() || is_zero(&c) {
                continue;
            }
            let p = pivot_row[pc].clone();
            let reduced: Vec<Expr> = rows[k]
                .iter()
                .zip(&pivot_row)
                .map(|(a, b)| {
                    collapse(&mk_sub(
                        mk_mul(vec![p.clone(), a.clone()]),
                        mk_mul(vec![c.clone(), b.clone()]),
                    ))
                })
                .collect();
            rows[k] = clear_denominators(&reduced);
        }
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&i| pivots[i]);
    let generators = order
        .into_iter()
        .map(|i| normalize_generator(&VectorField::new(d.frame.clone(), rows[i].clone())))
        .collect();
    Distribution::new(d.frame.clone(), generators)
}

/// Rescales a generator whose coefficient ratios are rational constants to a
/// primitive integer vector; other generators are returned unchanged.
pub fn normalize_generator(v: &VectorField) -> VectorField {
    let simplified: Vec<Expr> = v.coefficients.iter().map(simplify).collect();
    let pilot = simplified.iter().find(|c| !is_zero(c));
    let Some(pilot) = pilot else {
        return VectorField { frame: v.frame.clone(), coefficients: simplified };
    };
    let mut ratios = Vec::with_capacity(simplified.len());
    for c in &simplified {
        if is_zero(c) {
            ratios.push(BigRational::zero());
            continue;
        }
        let r = cancel_quotient(&mk_div(c.clone(), pilot.clone()));
        match r.as_rational() {
            Some(q) => ratios.push(q.clone()),
            None => {
                return VectorField { frame: v.frame.clone(), coefficients: simplified };
            }
        }
    }
    match primitive_integer_vector(&ratios) {
        Some(ints) => VectorField {
            frame: v.frame.clone(),
            coefficients: ints.into_iter().map(Expr::num).collect(),
        },
        None => VectorField { frame: v.frame.clone(), coefficients: simplified },
    }
}

/// The reference-point form solve_linear_symbolic expects, from an exact map.
pub(crate) fn value_point(point: &BTreeMap<Symbol, BigRational>) -> BTreeMap<Symbol, Value> {
    point.iter().map(|(s, q)| (s.clone(), Value::Rational(q.clone()))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::parse::parse_any;

    fn frame(names: &[&str]) -> Vec<Symbol> {
        names.iter().map(|n| Symbol::new(n)).collect()
    }

    fn field(fr: &[&str], coeffs: &[&str]) -> VectorField {
        VectorField::new(frame(fr), coeffs.iter().map(|c| parse_any(c).unwrap()).collect())
    }

    #[test]
    fn coordinate_fields_commute() {
        let fr = ["u1", "u2"];
        let v1 = field(&fr, &["1", "0"]);
        let v2 = field(&fr, &["0", "1"]);
        assert!(lie_bracket(&v1, &v2).is_zero_field());
    }

    #[test]
    fn bracket_of_linear_and_coordinate_field() {
        // [x1∂x2, ∂x1] = −∂x2
        let fr = ["x1", "x2"];
        let v1 = field(&fr, &["0", "x1"]);
        let v2 = field(&fr, &["1", "0"]);
        let br = lie_bracket(&v1, &v2);
        assert_eq!(br.coefficients[0], Expr::zero());
        assert_eq!(br.coefficients[1], Expr::int(-1));
    }

    #[test]
    fn directional_derivative_uses_all_coordinates() {
        let v = field(&["x1", "x2"], &["x2", "1"]);
        let g = parse_any("x1*x2").unwrap();
        // x2·∂x1(x1 x2) + 1·∂x2(x1 x2) = x2² + x1
        assert_eq!(v.apply(&g), parse_any("x2^2+x1").unwrap());
    }

    #[test]
    fn span_membership_with_function_coefficients() {
        let fr = ["x1", "x2", "x3"];
        let d = Distribution::new(
            frame(&fr),
            vec![field(&fr, &["1", "0", "x1"]), field(&fr, &["0", "1", "0"])],
        );
        // x2·g1 + g2 is in the span, a field with a fresh x3-direction is not
        let inside = field(&fr, &["x2", "1", "x1*x2"]);
        let outside = field(&fr, &["0", "0", "1"]);
        assert!(in_span(&inside, &d, None));
        assert!(!in_span(&outside, &d, None));
    }

    #[test]
    fn involutivity_of_coordinate_span_and_a_curved_failure() {
        let fr = ["x1", "x2", "x3"];
        let flat = Distribution::new(
            frame(&fr),
            vec![field(&fr, &["1", "0", "0"]), field(&fr, &["0", "1", "0"])],
        );
        assert!(is_involutive(&flat, None));

        // span{∂x1, ∂x2 + x1∂x3} has bracket ∂x3 outside the span
        let curved = Distribution::new(
            frame(&fr),
            vec![field(&fr, &["1", "0", "0"]), field(&fr, &["0", "1", "x1"])],
        );
        assert!(!is_involutive(&curved, None));
    }

    #[test]
    fn span_equality_ignores_scaling_and_basis_choice() {
        let fr = ["u1", "u2"];
        let a = Distribution::new(frame(&fr), vec![field(&fr, &["-2", "1"])]);
        let b = Distribution::new(frame(&fr), vec![field(&fr, &["2", "-1"])]);
        let c = Distribution::new(frame(&fr), vec![field(&fr, &["1", "0"])]);
        assert!(span_equal(&a, &b, None));
        assert!(!span_equal(&a, &c, None));
    }

    #[test]
    fn generator_normalization_strips_function_scale() {
        let fr = ["u1", "u2"];
        // 2P∂u1 − P∂u2 with P = x1/(x3+1) reduces to 2∂u1 − ∂u2
        let v = field(&fr, &["2*x1/(x3+1)", "-x1/(x3+1)"]);
        let n = normalize_generator(&v);
        assert_eq!(n.coefficients, vec![Expr::int(2), Expr::int(-1)]);

        // a genuinely non-proportional pair stays untouched
        let w = field(&fr, &["x1", "x3"]);
        assert_eq!(normalize_generator(&w).coefficients, w.coefficients);
    }

    #[test]
    fn primitive_vector_clears_denominators_and_signs() {
        let vals = vec![
            BigRational::new(0.into(), 1.into()),
            BigRational::new((-1).into(), 3.into()),
            BigRational::new((-1).into(), 1.into()),
        ];
        let prim = primitive_integer_vector(&vals).unwrap();
        let expect: Vec<BigRational> =
            vec![BigRational::from_integer(0.into()), BigRational::from_integer(1.into()), BigRational::from_integer(3.into())];
        assert_eq!(prim, expect);
        assert!(primitive_integer_vector(&[BigRational::zero()]).is_none());
    }

    #[test]
    fn display_joins_terms_with_signs() {
        let fr = ["u1", "u2"];
        let v = field(&fr, &["2", "-1"]);
        assert_eq!(v.to_string(), "2*d_u1 - d_u2");
        assert_eq!(VectorField::zero(frame(&fr)).to_string(), "0");
    }
}
