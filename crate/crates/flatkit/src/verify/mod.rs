//! Independent verification of flat-output candidates.
//!
//! A candidate y = phi(x, u, ..., u_[q]) is checked in three stages: the
//! outputs and their forward shifts must stay functionally independent, a
//! symbolic parametrization (x, u) = F(y, ..., y_[R]) is solved for by a
//! triangular cascade over the stacked jet equations, and a numeric
//! certificate solves the same equations at random output jets to confirm
//! that they determine the state and the input uniquely.

pub mod numeric;

use std::collections::{BTreeMap, BTreeSet};

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{check_f_related, VectorField};
use crate::symbolic::calculus::{differentiate, evaluate, substitute, Value};
use crate::symbolic::elim::solve_cascade;
use crate::symbolic::expr::{mk_sub, Expr, Symbol};
use crate::symbolic::normal::{cancel_quotient, is_zero, rationalize};
use crate::system::{shift_jets, DiscreteSystem, FlatOutputCandidate, Parametrization};

/// Knobs for the verifier; `max_shift: None` derives the stacked-shift
/// budget as n + q + 2.
#[derive(Clone, Debug)]
pub struct VerifyConfig {
    pub seed: u64,
    pub trials: usize,
    pub max_shift: Option<u32>,
    pub sample_points: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { seed: 42, trials: 8, max_shift: None, sample_points: 100 }
    }
}

/// Evidence from the floating-point path: every sampled output jet led the
/// damped Gauss-Newton iteration to a solution at which the stacked
/// Jacobian pins down the state and the input.
#[derive(Clone, Debug)]
pub struct NumericCertificate {
    pub points: usize,
    pub budget: u32,
    pub max_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerifyVerdict {
    Verified,
    Refuted,
    Inconclusive,
}

/// Combined result of all three stages.
#[derive(Clone, Debug)]
pub struct VerifyReport {
    /// Symbolic parametrization, when the cascade grounded every state and
    /// input and the defining identities checked out.
    pub symbolic: Option<Parametrization>,
    /// Numeric certificate, when every sampled point passed.
    pub numeric: Option<NumericCertificate>,
    /// Evidence against flatness of the candidate.
    pub refutation: Option<String>,
    /// Why neither verification path finished, when both came up empty.
    pub note: Option<String>,
    /// Expressions assumed nonzero along the way.
    pub assumptions: Vec<Expr>,
    /// Output jet symbols used by the parametrization.
    pub jet_symbols: Vec<Symbol>,
}

impl VerifyReport {
    pub fn verdict(&self) -> VerifyVerdict {
        if self.symbolic.is_some() || self.numeric.is_some() {
            VerifyVerdict::Verified
        } else if self.refutation.is_some() {
            VerifyVerdict::Refuted
        } else {
            VerifyVerdict::Inconclusive
        }
    }
}

/// Picks `count` jet base names that collide with nothing the system uses.
fn jet_names(sys: &DiscreteSystem, count: usize) -> Vec<Symbol> {
    let table = sys.var_table();
    (1..=count)
        .map(|j| {
            let mut name = format!("y{j}");
            while table.contains(&name) {
                name.push('a');
            }
            Symbol::new(&name)
        })
        .collect()
}

/// Stacked jet equations `y^s_[alpha] - delta^alpha(phi_s)` for all
/// components and shifts 0..=beta, in numerator form, together with the
/// denominators that were cleared.
fn stacked_equations(
    sys: &DiscreteSystem,
    cand: &FlatOutputCandidate,
    y: &[Symbol],
    beta: u32,
) -> (Vec<Expr>, Vec<Expr>) {
    let mut equations = Vec::new();
    let mut cleared = Vec::new();
    for alpha in 0..=beta {
        for (s, phi) in cand.components.iter().enumerate() {
            let jet = Expr::var(&y[s].at_shift(alpha));
            let rhs = sys.shift_xu(phi, alpha);
            let eq = cancel_quotient(&mk_sub(jet, rhs));
            let (num, den) = rationalize(&eq);
            if den.as_rational().is_none() {
                cleared.push(den);
            }
            equations.push(num);
        }
    }
    (equations, cleared)
}

/// Unknowns of the stacked system: states first, then input jets by shift
/// and index. The leading n + m entries are exactly (x, u).
fn stacked_unknowns(sys: &DiscreteSystem, equations: &[Expr]) -> Vec<Symbol> {
    let mut input_shifts: BTreeSet<(u32, usize)> = BTreeSet::new();
    for eq in equations {
        for v in eq.free_vars() {
            if let Some(j) = sys.inputs.iter().position(|u| u.base() == v.base()) {
                input_shifts.insert((v.shift(), j));
            }
        }
    }
    let mut unknowns: Vec<Symbol> = sys.states.clone();
    for (shift, j) in input_shifts {
        unknowns.push(sys.inputs[j].at_shift(shift));
    }
    unknowns
}

fn apply_parametrization(
    param: &Parametrization,
    sys: &DiscreteSystem,
    q: u32,
    e: &Expr,
) -> Expr {
    let mut binds: BTreeMap<Symbol, Expr> = BTreeMap::new();
    for (s, fx) in sys.states.iter().zip(&param.f_x) {
        binds.insert(s.clone(), fx.clone());
    }
    for k in 0..=q {
        for (u, fu) in sys.inputs.iter().zip(&param.f_u) {
            binds.insert(u.at_shift(k), shift_jets(fu, &param.y, k));
        }
    }
    substitute(e, &binds)
}

/// Attempts the symbolic parametrization at one shift budget. Returns the
/// parametrization and the nonzero assumptions collected on the way.
fn symbolic_attempt(
    sys: &DiscreteSystem,
    cand: &FlatOutputCandidate,
    y: &[Symbol],
    beta: u32,
) -> Option<(Parametrization, Vec<Expr>)> {
    let (equations, cleared) = stacked_equations(sys, cand, y, beta);
    let unknowns = stacked_unknowns(sys, &equations);
    let solved = solve_cascade(&equations, &unknowns);

    let mut f_x = Vec::with_capacity(sys.n());
    for s in &sys.states {
        f_x.push(cancel_quotient(solved.solutions.get(s)?));
    }
    let mut f_u = Vec::with_capacity(sys.m());
    for u in &sys.inputs {
        f_u.push(cancel_quotient(solved.solutions.get(u)?));
    }

    let mut orders = vec![0u32; y.len()];
    for e in f_x.iter().chain(&f_u) {
        for v in e.free_vars() {
            if let Some(j) = y.iter().position(|b| b.base() == v.base()) {
                orders[j] = orders[j].max(v.shift());
            }
        }
    }

    let param = Parametrization { y: y.to_vec(), f_x, f_u, orders };
    if !param.identity_residuals(sys).is_empty() {
        return None;
    }
    for (s, phi) in cand.components.iter().enumerate() {
        let back = apply_parametrization(&param, sys, cand.max_shift, phi);
        if !is_zero(&mk_sub(back, Expr::var(&y[s]))) {
            return None;
        }
    }

    let mut assumptions = cleared;
    assumptions.extend(solved.assumptions);
    Some((param, assumptions))
}

/// Outcome counters of the sampled Newton runs.
struct SampleStats {
    converged: usize,
    determined: usize,
    max_residual: f64,
}

fn numeric_attempt(
    sys: &DiscreteSystem,
    cand: &FlatOutputCandidate,
    y: &[Symbol],
    beta: u32,
    cfg: &VerifyConfig,
) -> SampleStats {
    let (equations, _) = stacked_equations(sys, cand, y, beta);
    let unknowns = stacked_unknowns(sys, &equations);
    let jac: Vec<Vec<Expr>> = equations
        .iter()
        .map(|e| unknowns.iter().map(|u| differentiate(e, u)).collect())
        .collect();

    let base = sys.base_point();
    let base_values: BTreeMap<Symbol, Value> =
        base.iter().map(|(k, v)| (k.clone(), Value::Rational(v.clone()))).collect();
    let jet_base: Vec<f64> = cand
        .components
        .iter()
        .map(|phi| evaluate(phi, &base_values).unwrap_or(0.0))
        .collect();
    let start_base: Vec<f64> = unknowns
        .iter()
        .map(|s| {
            base.get(&Symbol::new(s.base()))
                .and_then(|r| evaluate(&Expr::num(r.clone()), &BTreeMap::new()).ok())
                .unwrap_or(0.0)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stats = SampleStats { converged: 0, determined: 0, max_residual: 0.0 };
    let split = sys.n() + sys.m();

    for _ in 0..cfg.sample_points {
        let mut knowns: BTreeMap<Symbol, Value> = sys
            .params
            .iter()
            .map(|(k, v)| (k.clone(), Value::Rational(v.clone())))
            .collect();
        for alpha in 0..=beta {
            for (s, base_val) in jet_base.iter().enumerate() {
                let jitter: f64 = rng.gen_range(-0.2..0.2);
                knowns.insert(y[s].at_shift(alpha), Value::Float(base_val + jitter));
            }
        }
        let start: Vec<f64> =
            start_base.iter().map(|b| b + rng.gen_range(-0.02..0.02)).collect();

        let out = numeric::gauss_newton(&equations, &jac, &unknowns, &knowns, &start);
        if !out.converged {
            continue;
        }
        stats.converged += 1;
        stats.max_residual = stats.max_residual.max(out.residual);

        let Some(j) = numeric::eval_matrix(&jac, &unknowns, &knowns, &out.solution) else {
            continue;
        };
        let full = numeric::numeric_rank(&j);
        let rest: Vec<Vec<f64>> = j.iter().map(|row| row[split..].to_vec()).collect();
        if full == numeric::numeric_rank(&rest) + split {
            stats.determined += 1;
        }
    }
    stats
}

/// Runs all three stages on a candidate flat output.
pub fn verify_candidate(
    sys: &DiscreteSystem,
    cand: &FlatOutputCandidate,
    cfg: &VerifyConfig,
) -> VerifyReport {
    let budget = cfg.max_shift.unwrap_or(sys.n() as u32 + cand.max_shift + 2);
    let y = jet_names(sys, sys.m());
    let mut report = VerifyReport {
        symbolic: None,
        numeric: None,
        refutation: None,
        note: None,
        assumptions: Vec::new(),
        jet_symbols: y.clone(),
    };

    // stage 1: the outputs and their shifts must stay independent
    match sys.functional_independence(&cand.components, budget, cfg.seed) {
        Ok(true) => {}
        Ok(false) => {
            let mut level = budget;
            for alpha in 0..budget {
                if sys.functional_independence(&cand.components, alpha, cfg.seed) == Ok(false) {
                    level = alpha;
                    break;
                }
            }
            report.refutation = Some(format!(
                "the outputs and their forward shifts become functionally dependent at shift {level}"
            ));
            return report;
        }
        Err(e) => {
            report.note = Some(format!("independence sampling failed: {e}"));
            return report;
        }
    }

    // stage 2: symbolic parametrization by iterative deepening
    for beta in 1..=budget {
        if let Some((param, assumptions)) = symbolic_attempt(sys, cand, &y, beta) {
            report.symbolic = Some(param);
            report.assumptions = assumptions;
            break;
        }
    }

    // stage 3: numeric certificate at the full budget
    let stats = numeric_attempt(sys, cand, &y, budget, cfg);
    if stats.converged == cfg.sample_points && stats.determined == cfg.sample_points {
        report.numeric = Some(NumericCertificate {
            points: stats.converged,
            budget,
            max_residual: stats.max_residual,
        });
    } else if report.symbolic.is_none() {
        if stats.converged == cfg.sample_points && stats.determined == 0 {
            report.refutation = Some(format!(
                "the output jets up to shift {budget} never determine the state and input \
                 (rank defect at all {} sampled points)",
                stats.converged
            ));
        } else {
            report.note = Some(format!(
                "numeric certification incomplete: {}/{} points converged, {} of those \
                 determined the state and input",
                stats.converged, cfg.sample_points, stats.determined
            ));
        }
    }

    report
}

/// An f-related pair read off from a verified parametrization: `v` acts on
/// states and inputs, `w` on the shifted states, and the update map carries
/// `v` to `w`.
#[derive(Clone, Debug)]
pub struct FRelatedPair {
    pub component: usize,
    pub order: u32,
    pub v: VectorField,
    pub w: VectorField,
}

/// Substitutes output jets by the shifted outputs, then freezes input
/// occurrences at the given constants (equilibrium values by default).
/// `slot_offset` shifts the constant index: the state-side functions are
/// read one step ahead, so their `u_[k]` slot holds the constant chosen for
/// `u_[k+1]`. Slots whose shifted index is 0 stay free.
fn ground_jets(
    e: &Expr,
    sys: &DiscreteSystem,
    cand: &FlatOutputCandidate,
    y: &[Symbol],
    constants: &BTreeMap<Symbol, Expr>,
    slot_offset: u32,
) -> Expr {
    let mut binds: BTreeMap<Symbol, Expr> = BTreeMap::new();
    for v in e.free_vars() {
        if let Some(s) = y.iter().position(|b| b.base() == v.base()) {
            binds.insert(v.clone(), sys.shift_xu(&cand.components[s], v.shift()));
        }
    }
    let composed = substitute(e, &binds);
    let mut grounded: BTreeMap<Symbol, Expr> = BTreeMap::new();
    for v in composed.free_vars() {
        if !sys.inputs.iter().any(|u| u.base() == v.base()) {
            continue;
        }
        let key = v.at_shift(v.shift() + slot_offset);
        if key.shift() == 0 {
            continue;
        }
        let c = constants.get(&key).cloned().unwrap_or_else(|| {
            let base = sys
                .equilibrium
                .get(&Symbol::new(v.base()))
                .cloned()
                .unwrap_or_else(|| BigRational::from_integer(0.into()));
            Expr::num(base)
        });
        grounded.insert(v, c);
    }
    cancel_quotient(&substitute(&composed, &grounded))
}

/// Reads one f-related pair per output component off the parametrization:
/// w is the derivative of the state part by the next-to-top jet, v the
/// derivative of the input part by the top jet, both composed with the
/// output jets. Input occurrences surviving the composition are frozen at
/// `constants` (keyed by forward input shifts); w lives on the shifted
/// state frame, so its slots are frozen one constant ahead and its state
/// symbols relabelled to their successors.
pub fn frelated_pairs(
    sys: &DiscreteSystem,
    cand: &FlatOutputCandidate,
    param: &Parametrization,
    constants: &BTreeMap<Symbol, Expr>,
) -> Result<Vec<FRelatedPair>, String> {
    if !param.states_avoid_top_jets() {
        return Err("state part reaches the top jet order of an output".into());
    }
    let plus: Vec<Symbol> = sys.states.iter().map(|s| s.shifted(1)).collect();
    let relabel: BTreeMap<Symbol, Expr> = sys
        .states
        .iter()
        .map(|s| (s.clone(), Expr::var(&s.shifted(1))))
        .collect();
    let coords = sys.coords();
    let mut pairs = Vec::new();
    for (s, &r) in param.orders.iter().enumerate() {
        if r == 0 {
            continue;
        }
        let below = param.y[s].at_shift(r - 1);
        let top = param.y[s].at_shift(r);
        let w_coeffs: Vec<Expr> = param
            .f_x
            .iter()
            .map(|fx| {
                let grounded =
                    ground_jets(&differentiate(fx, &below), sys, cand, &param.y, constants, 1);
                substitute(&grounded, &relabel)
            })
            .collect();
        let mut v_coeffs = vec![Expr::zero(); sys.n()];
        for fu in &param.f_u {
            v_coeffs.push(ground_jets(
                &differentiate(fu, &top),
                sys,
                cand,
                &param.y,
                constants,
                0,
            ));
        }
        let v = VectorField::new(coords.clone(), v_coeffs);
        let w = VectorField::new(plus.clone(), w_coeffs);
        if !check_f_related(&v, &w, sys) {
            return Err(format!(
                "derived pair for component {} is not related by the update map",
                s + 1
            ));
        }
        pairs.push(FRelatedPair { component: s, order: r, v, w });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::expr::{mk_add, mk_mul};
    use crate::symbolic::normal::equivalent;
    use crate::symbolic::parse::parse_any;
    use crate::system::test_fixtures::{academic, robot_euler};

    fn candidate(sys: &DiscreteSystem, comps: &[&str]) -> FlatOutputCandidate {
        FlatOutputCandidate::new(
            comps.iter().map(|c| parse_any(c).unwrap()).collect(),
            sys,
        )
        .unwrap()
    }

    fn matches(e: &Expr, want: &str) {
        let w = parse_any(want).unwrap();
        assert!(equivalent(e, &w), "expected `{want}`, got `{e}`");
    }

    #[test]
    fn grounded_parametrization_matches_the_known_one() {
        let sys = academic();
        let cand = candidate(&sys, &["x1*(x3+1)", "x2+3*x4"]);
        let report = verify_candidate(&sys, &cand, &VerifyConfig::default());
        assert_eq!(report.verdict(), VerifyVerdict::Verified);
        let param = report.symbolic.expect("the cascade should ground this output");
        assert_eq!(param.orders, vec![3, 2]);
        let states = [
            "y1/(y1@1-y2+1)",
            "3*y1*(y1@2-y2@1)+y2-3*y2@1",
            "y1@1-y2",
            "y1*(y2@1-y1@2)+y2@1",
        ];
        for (fx, want) in param.f_x.iter().zip(states) {
            matches(fx, want);
        }
        let inputs = [
            "2*y1+2*y1@1*(y1@3-y2@2)+y1@2-y2@1-2*y2@2",
            "y2@2-y1@1*(y1@3-y2@2)-y1",
        ];
        for (fu, want) in param.f_u.iter().zip(inputs) {
            matches(fu, want);
        }
        assert!(report.numeric.is_some(), "numeric certificate should confirm");
    }

    #[test]
    fn dependent_outputs_are_refuted_at_the_exact_shift() {
        let sys = academic();
        let cand = candidate(&sys, &["x1", "2*x1+1"]);
        let report = verify_candidate(&sys, &cand, &VerifyConfig::default());
        assert_eq!(report.verdict(), VerifyVerdict::Refuted);
        let why = report.refutation.unwrap();
        assert!(why.contains("dependent at shift 0"), "got: {why}");
    }

    #[test]
    fn outputs_that_miss_states_are_refuted_by_rank_defect() {
        let sys = academic();
        let cand = candidate(&sys, &["x3", "u2"]);
        let cfg = VerifyConfig { sample_points: 25, ..VerifyConfig::default() };
        let report = verify_candidate(&sys, &cand, &cfg);
        assert_eq!(report.verdict(), VerifyVerdict::Refuted);
        let why = report.refutation.unwrap();
        assert!(why.contains("rank defect"), "got: {why}");
    }

    #[test]
    fn trigonometric_dynamics_fall_back_to_the_numeric_certificate() {
        let sys = robot_euler();
        let cand = candidate(&sys, &["x1", "x2"]);
        let report = verify_candidate(&sys, &cand, &VerifyConfig::default());
        assert_eq!(report.verdict(), VerifyVerdict::Verified);
        assert!(report.symbolic.is_none(), "the cascade cannot invert the trig update");
        let cert = report.numeric.expect("numeric certificate");
        assert!(cert.max_residual < 1e-6);
    }

    #[test]
    fn exp_augmented_output_grounds_with_higher_orders() {
        let sys = academic();
        let cand = candidate(&sys, &["x1*(x3+1)+exp(u1+2*u2)", "x3"]);
        let report = verify_candidate(&sys, &cand, &VerifyConfig::default());
        assert_eq!(report.verdict(), VerifyVerdict::Verified);
        let param = report.symbolic.expect("shift substitution should clear the exponential");
        assert_eq!(param.orders, vec![3, 4]);
    }

    #[test]
    fn derived_pair_is_carried_by_the_update_map() {
        let sys = academic();
        let cand = candidate(&sys, &["x1*(x3+1)", "x2+3*x4"]);
        let report = verify_candidate(&sys, &cand, &VerifyConfig::default());
        let param = report.symbolic.unwrap();
        let pairs = frelated_pairs(&sys, &cand, &param, &BTreeMap::new()).unwrap();
        assert_eq!(pairs.len(), 2);
        let first = &pairs[0];
        assert_eq!((first.component, first.order), (0, 3));
        let v = [
            "0",
            "0",
            "0",
            "0",
            "2*(x2+x3+3*x4)",
            "-(x2+x3+3*x4)",
        ];
        for (c, want) in first.v.coefficients.iter().zip(v) {
            matches(c, want);
        }
        let w = ["0", "3*x1@1*(x3@1+1)", "0", "-x1@1*(x3@1+1)"];
        for (c, want) in first.w.coefficients.iter().zip(w) {
            matches(c, want);
        }
    }

    #[test]
    fn derived_pair_spans_are_stable_across_frozen_constants() {
        let sys = academic();
        let cand = candidate(&sys, &["x1*(x3+1)+exp(u1+2*u2)", "x3"]);
        let report = verify_candidate(&sys, &cand, &VerifyConfig::default());
        let param = report.symbolic.unwrap();
        for (t, base) in [0i64, 1, -1, 2, 3].iter().enumerate() {
            let mut constants = BTreeMap::new();
            for k in 1..=6u32 {
                for (j, u) in sys.inputs.iter().enumerate() {
                    constants.insert(u.at_shift(k), Expr::int(base + k as i64 + j as i64 * 7 - 3));
                }
            }
            let pairs = frelated_pairs(&sys, &cand, &param, &constants)
                .unwrap_or_else(|e| panic!("constant choice {t}: {e}"));
            assert_eq!(pairs.len(), 2);
            for p in &pairs {
                let v4 = p.v.coefficients[4].clone();
                let v5 = p.v.coefficients[5].clone();
                assert!(
                    is_zero(&mk_add(vec![v4.clone(), mk_mul(vec![Expr::int(2), v5])])),
                    "choice {t}: v is not along 2*d/du1 - d/du2: {v4}"
                );
                assert!(!is_zero(&v4), "choice {t}: v vanished");
                let w = &p.w.coefficients;
                assert!(is_zero(&w[0]) && is_zero(&w[2]), "choice {t}: w leaks off the plane");
                assert!(
                    is_zero(&mk_add(vec![w[1].clone(), mk_mul(vec![Expr::int(3), w[3].clone()])])),
                    "choice {t}: w is not along 3*d/dx2+ - d/dx4+: {}",
                    w[1]
                );
                assert!(!is_zero(&w[1]), "choice {t}: w vanished");
            }
        }
    }
}
