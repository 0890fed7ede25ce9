//! The decomposition loop that decides difference flatness and constructs a
//! state-only flat output.
//!
//! Each round either terminates (no more states than inputs), refutes
//! flatness through an exact empty-null-space certificate for the
//! projectable subdistribution, or peels off a subsystem in straightened
//! coordinates: the inputs are transformed so that the projectable
//! directions come last, the states so that the image directions come last,
//! and the leading equations form a smaller system whose inputs are the
//! trailing new states together with the untouched new inputs. Inputs the
//! subsystem does not depend on regularly are eliminated and recorded as
//! flat output components; the subsystem then goes through the next round.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::{Duration, Instant};

use num_rational::BigRational;
use num_traits::Zero;
use serde_json::{json, Value as Json};

use crate::geometry::chart::combinations;
use crate::geometry::{
    build_adapted_chart, echelonize, find_projectable_subdistribution, pushforward, straighten,
    Distribution, ProjectableSearch, Transformation, VectorField,
};
use crate::symbolic::calculus::{differentiate, eval_exact_rational, substitute};
use crate::symbolic::expr::{mk_sub, Expr, Symbol};
use crate::symbolic::normal::{cancel_quotient, collapse, is_zero};
use crate::symbolic::rank::generic_rank;
use crate::system::{DiscreteSystem, FlatOutputCandidate, Parametrization};
use crate::verify::{verify_candidate, VerifyConfig};

/// Knobs for the decomposition; the defaults reproduce the documented
/// behavior on the bundled examples.
#[derive(Clone, Debug)]
pub struct DecomposeConfig {
    pub seed: u64,
    pub trials: usize,
    /// Keep only one generator of the projectable subdistribution per step.
    pub one_dim: bool,
    /// Enumerate every admissible choice of redundant inputs instead of the
    /// first one.
    pub explore_branches: bool,
    /// Degree cap for polynomial first-integral candidates.
    pub max_ansatz_degree: u32,
    /// Run the independent verifier on the constructed output.
    pub verify_output: bool,
    /// Shift budget handed to the verifier; `None` derives it.
    pub max_shift: Option<u32>,
    /// Sample count for the numeric certificate.
    pub sample_points: usize,
    /// Failure-injection switch: with straightening disabled every
    /// decomposition step aborts, so the verdict degrades to inconclusive.
    pub straightening_enabled: bool,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        DecomposeConfig {
            seed: 42,
            trials: 8,
            one_dim: false,
            explore_branches: false,
            max_ansatz_degree: 3,
            verify_output: true,
            max_shift: None,
            sample_points: 100,
            straightening_enabled: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Flat,
    NotFlat,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Flat => write!(f, "flat"),
            Verdict::NotFlat => write!(f, "not_flat"),
            Verdict::Inconclusive => write!(f, "inconclusive"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct VerificationSummary {
    pub symbolic: bool,
    pub numeric: bool,
}

/// Everything recorded about one round of the loop. A round is either a
/// decomposition (subdistribution through subsystem filled in), a terminal
/// round (`terminal_outputs`), or a refutation (`obstruction`).
#[derive(Clone, Debug)]
pub struct DecompositionStep {
    pub index: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    pub subdistribution: Option<Distribution>,
    pub pushforward: Option<Distribution>,
    pub input_transformation: Option<Transformation>,
    pub state_transformation: Option<Transformation>,
    pub elimination: Option<Transformation>,
    pub subsystem: Option<DiscreteSystem>,
    /// Flat output components fixed by this round, in original coordinates.
    pub eliminated_outputs: Vec<Expr>,
    /// States of the terminal round, in original coordinates.
    pub terminal_outputs: Option<Vec<Expr>>,
    /// Projectability conditions with only the zero solution, in the
    /// adapted chart of this round.
    pub obstruction: Option<Vec<Expr>>,
    pub assumptions: Vec<Expr>,
    pub note: Option<String>,
}

impl DecompositionStep {
    fn blank(index: usize, sys: &DiscreteSystem) -> Self {
        DecompositionStep {
            index,
            state_dim: sys.n(),
            input_dim: sys.m(),
            subdistribution: None,
            pushforward: None,
            input_transformation: None,
            state_transformation: None,
            elimination: None,
            subsystem: None,
            eliminated_outputs: Vec::new(),
            terminal_outputs: None,
            obstruction: None,
            assumptions: Vec::new(),
            note: None,
        }
    }
}

/// Final answer of the decomposition, with the audit trail.
#[derive(Clone, Debug)]
pub struct FlatnessReport {
    pub system: String,
    pub verdict: Verdict,
    pub flat_output: Option<Vec<Expr>>,
    /// Further flat outputs found on other branches.
    pub alternatives: Vec<Vec<Expr>>,
    pub steps: Vec<DecompositionStep>,
    pub parametrization: Option<Parametrization>,
    pub verified: VerificationSummary,
    pub assumptions: Vec<String>,
    pub seed: u64,
    pub reason: Option<String>,
    pub elapsed: Duration,
}

enum Outcome {
    Flat { output: Vec<Expr>, steps: Vec<DecompositionStep> },
    NotFlat { steps: Vec<DecompositionStep> },
    Inconclusive { reason: String, steps: Vec<DecompositionStep> },
}

/// Fresh symbols `"{prefix}_1"..` that collide with nothing in `taken`;
/// every returned name is added to `taken`.
fn fresh_batch(prefix: &str, count: usize, taken: &mut BTreeSet<String>) -> Vec<Symbol> {
    (1..=count)
        .map(|i| {
            let mut name = format!("{prefix}_{i}");
            while !taken.insert(name.clone()) {
                name.push('a');
            }
            Symbol::new(&name)
        })
        .collect()
}

fn names_in_use(sys: &DiscreteSystem, original: &DiscreteSystem) -> BTreeSet<String> {
    let mut taken: BTreeSet<String> = sys.var_table().names().iter().cloned().collect();
    taken.extend(original.var_table().names().iter().cloned());
    taken
}

struct ElimBranch {
    next: DiscreteSystem,
    elim: Transformation,
    /// The redundant input symbols, in subsystem coordinates.
    redundant: Vec<Symbol>,
}

/// Splits the subsystem inputs into essential and redundant ones. The
/// essential combinations are chosen as update components with a regular
/// input Jacobian; the redundant outputs are picked from the leading
/// (state-target) inputs in ascending order.
fn eliminate_redundant(
    sub: &DiscreteSystem,
    state_targets: usize,
    level: usize,
    cfg: &DecomposeConfig,
    taken: &mut BTreeSet<String>,
) -> Result<Option<Vec<ElimBranch>>, String> {
    let w = &sub.inputs;
    let m = sub.m();
    let coords = sub.coords();
    let base = sub.base_point();
    let jac: Vec<Vec<Expr>> = sub
        .updates
        .iter()
        .map(|f| w.iter().map(|u| differentiate(f, u)).collect())
        .collect();
    let r = generic_rank(&jac, &coords, &base, cfg.trials, cfg.seed)
        .map_err(|e| format!("input rank sampling failed: {e}"))?;
    if r == m {
        return Ok(None);
    }
    let excess = m - r;
    if excess > state_targets {
        return Err(format!(
            "{excess} redundant inputs cannot all come from {state_targets} trailing states"
        ));
    }

    // essential combinations: the first r update components whose input
    // Jacobian block keeps the full generic rank
    let mut chosen_rows: Option<Vec<usize>> = None;
    for rows in combinations(sub.n(), r) {
        let block: Vec<Vec<Expr>> = rows.iter().map(|&i| jac[i].clone()).collect();
        if generic_rank(&block, &coords, &base, cfg.trials, cfg.seed) == Ok(r) {
            chosen_rows = Some(rows);
            break;
        }
    }
    let rows = chosen_rows.ok_or("no update components span the input rank")?;

    let hat = fresh_batch(&format!("w{level}"), r, taken);
    let out_syms = fresh_batch(&format!("y{level}"), excess, taken);

    let mut branches = Vec::new();
    for positions in combinations(state_targets, excess) {
        let redundant: Vec<Symbol> = positions.iter().map(|&j| w[j].clone()).collect();

        let mut forward: Vec<(Symbol, Expr)> = Vec::with_capacity(m);
        for (h, &i) in hat.iter().zip(&rows) {
            forward.push((h.clone(), sub.updates[i].clone()));
        }
        for (y, red) in out_syms.iter().zip(&redundant) {
            forward.push((y.clone(), Expr::var(red)));
        }

        let equations: Vec<Expr> = forward
            .iter()
            .map(|(s, e)| mk_sub(Expr::var(s), e.clone()))
            .collect();
        let solved = crate::symbolic::elim::solve_cascade(&equations, w);
        if !solved.residual.is_empty()
            || !solved.pending.is_empty()
            || w.iter().any(|u| !solved.solutions.contains_key(u))
        {
            continue;
        }

        // the inversion must be regular at the equilibrium image
        let mut image = base.clone();
        for (h, &i) in hat.iter().zip(&rows) {
            image.insert(h.clone(), base[&sub.states[i]].clone());
        }
        for (y, red) in out_syms.iter().zip(&redundant) {
            image.insert(y.clone(), base[red].clone());
        }
        let alive = solved.assumptions.iter().all(|a| {
            eval_exact_rational(a, &image).map(|v| !v.is_zero()).unwrap_or(false)
        });
        if !alive {
            continue;
        }

        let inverse_map: BTreeMap<Symbol, Expr> =
            w.iter().map(|u| (u.clone(), solved.solutions[u].clone())).collect();
        let hatted: Vec<Expr> = sub
            .updates
            .iter()
            .map(|f| cancel_quotient(&substitute(f, &inverse_map)))
            .collect();
        let output_free = hatted
            .iter()
            .all(|f| out_syms.iter().all(|y| is_zero(&differentiate(f, y))));
        if !output_free {
            continue;
        }

        let mut equilibrium: BTreeMap<Symbol, BigRational> = BTreeMap::new();
        for s in &sub.states {
            equilibrium.insert(s.clone(), base[s].clone());
        }
        for (h, &i) in hat.iter().zip(&rows) {
            equilibrium.insert(h.clone(), base[&sub.states[i]].clone());
        }
        let next = DiscreteSystem {
            name: sub.name.clone(),
            states: sub.states.clone(),
            inputs: hat.clone(),
            updates: hatted,
            equilibrium,
            params: sub.params.clone(),
        };

        let elim = Transformation {
            new_names: forward.iter().map(|(s, _)| s.clone()).collect(),
            targets: out_syms.clone(),
            forward: forward.clone(),
            inverse: w
                .iter()
                .map(|u| (u.clone(), cancel_quotient(&solved.solutions[u])))
                .collect(),
            assumptions: solved.assumptions.clone(),
        };

        branches.push(ElimBranch { next, elim, redundant });
        if !cfg.explore_branches {
            break;
        }
    }

    if branches.is_empty() {
        return Err("no admissible choice of redundant inputs could be inverted".into());
    }
    Ok(Some(branches))
}

/// One full decomposition round on `sys`; recursion carries the map back to
/// original coordinates and the output components fixed so far.
#[allow(clippy::too_many_arguments)]
fn drive(
    sys: &DiscreteSystem,
    original: &DiscreteSystem,
    to_original: &BTreeMap<Symbol, Expr>,
    collected: &[Vec<Expr>],
    steps: &[DecompositionStep],
    level: usize,
    cfg: &DecomposeConfig,
) -> Vec<Outcome> {
    let mut step = DecompositionStep::blank(level, sys);

    // terminal round: every state is a flat output component
    if sys.n() <= sys.m() {
        let outputs: Vec<Expr> = sys
            .states
            .iter()
            .map(|s| cancel_quotient(&to_original[s]))
            .collect();
        step.terminal_outputs = Some(outputs.clone());
        let mut all_steps = steps.to_vec();
        all_steps.push(step);
        let mut output = outputs;
        for earlier in collected.iter().rev() {
            output.extend(earlier.iter().cloned());
        }
        return vec![Outcome::Flat { output, steps: all_steps }];
    }

    let abort = |mut step: DecompositionStep, reason: String| {
        step.note = Some(reason.clone());
        let mut all_steps = steps.to_vec();
        all_steps.push(step);
        vec![Outcome::Inconclusive { reason, steps: all_steps }]
    };

    if level > original.n() {
        return abort(step, "decomposition did not terminate within the state dimension".into());
    }

    let chart = match build_adapted_chart(sys, cfg.seed, cfg.trials, None) {
        Ok(c) => c,
        Err(e) => return abort(step, format!("adapted chart construction failed: {e}")),
    };
    step.assumptions.extend(chart.pivot_assumptions.iter().cloned());

    let d = match find_projectable_subdistribution(sys, &chart, cfg.seed, cfg.trials, cfg.one_dim)
    {
        Ok(ProjectableSearch::Found { distribution, dropped }) => {
            if dropped > 0 {
                step.note =
                    Some(format!("{dropped} generator(s) dropped to restore involutivity"));
            }
            distribution
        }
        Ok(ProjectableSearch::Empty { conditions }) => {
            step.obstruction = Some(conditions);
            let mut all_steps = steps.to_vec();
            all_steps.push(step);
            return vec![Outcome::NotFlat { steps: all_steps }];
        }
        Err(e) => return abort(step, format!("projectability analysis failed: {e}")),
    };
    step.subdistribution = Some(d.clone());

    let fd = match pushforward(&d, sys, &chart) {
        Ok(fd) => fd,
        Err(e) => return abort(step, format!("pushforward failed: {e}")),
    };
    step.pushforward = Some(fd.clone());

    if !cfg.straightening_enabled {
        return abort(step, "straightening disabled by configuration".into());
    }

    let n = sys.n();
    let base = sys.base_point();
    let mut taken = names_in_use(sys, original);
    let fresh_z = fresh_batch(&format!("z{level}"), n, &mut taken);
    let fresh_v = fresh_batch(&format!("v{level}"), sys.m(), &mut taken);

    // straighten the input directions of the subdistribution
    let d_inputs = echelonize(&Distribution::new(
        sys.inputs.clone(),
        d.generators.iter().map(|g| VectorField::new(sys.inputs.clone(), g.coefficients[n..].to_vec())).collect(),
    ));
    let t_u = match straighten(&d_inputs, &fresh_v, &base, cfg.seed, cfg.trials, cfg.max_ansatz_degree) {
        Ok(t) => t,
        Err(e) => return abort(step, format!("input straightening failed: {e}")),
    };

    // straighten the image directions, read on unshifted states
    let rebase: BTreeMap<Symbol, Expr> = sys
        .states
        .iter()
        .map(|s| (s.shifted(1), Expr::var(s)))
        .collect();
    let d_states = echelonize(&Distribution::new(
        sys.states.clone(),
        fd.generators
            .iter()
            .map(|g| {
                VectorField::new(
                    sys.states.clone(),
                    g.coefficients.iter().map(|c| substitute(c, &rebase)).collect(),
                )
            })
            .collect(),
    ));
    let t_s = match straighten(&d_states, &fresh_z, &base, cfg.seed, cfg.trials, cfg.max_ansatz_degree) {
        Ok(t) => t,
        Err(e) => return abort(step, format!("state straightening failed: {e}")),
    };

    let p = t_s.targets.len();
    if p == 0 || p != t_u.targets.len() {
        return abort(
            step,
            format!(
                "straightened dimensions disagree: {} input target(s), {p} state target(s)",
                t_u.targets.len()
            ),
        );
    }
    step.assumptions.extend(t_u.assumptions.iter().cloned());
    step.assumptions.extend(t_s.assumptions.iter().cloned());
    step.input_transformation = Some(t_u.clone());
    step.state_transformation = Some(t_s.clone());

    // update laws in the new coordinates
    let state_update: BTreeMap<Symbol, Expr> = sys
        .states
        .iter()
        .cloned()
        .zip(sys.updates.iter().cloned())
        .collect();
    let mut old_to_new = t_s.inverse_map();
    old_to_new.extend(t_u.inverse_map());
    let transformed: Vec<Expr> = t_s
        .forward
        .iter()
        .map(|(_, phi)| {
            let pushed = substitute(phi, &state_update);
            collapse(&substitute(&pushed, &old_to_new))
        })
        .collect();

    // the leading equations must not see the straightened input directions
    for f in transformed.iter().take(n - p) {
        for vt in &t_u.targets {
            if !is_zero(&differentiate(f, vt)) {
                return abort(
                    step,
                    format!("decomposed form not reached: `{vt}` survives in a leading update"),
                );
            }
        }
    }

    // assemble the subsystem: trailing new states and untouched new inputs
    // drive the leading new states
    let sub_states: Vec<Symbol> = fresh_z[..n - p].to_vec();
    let mut sub_inputs: Vec<Symbol> = fresh_z[n - p..].to_vec();
    sub_inputs.extend(fresh_v.iter().filter(|v| !t_u.targets.contains(v)).cloned());

    let image_s = match t_s.image_point(&base) {
        Some(i) => i,
        None => return abort(step, "state transformation image of the equilibrium failed".into()),
    };
    let image_u = match t_u.image_point(&base) {
        Some(i) => i,
        None => return abort(step, "input transformation image of the equilibrium failed".into()),
    };
    let mut equilibrium: BTreeMap<Symbol, BigRational> = BTreeMap::new();
    for z in &fresh_z {
        equilibrium.insert(z.clone(), image_s[z].clone());
    }
    for v in &sub_inputs {
        if let Some(val) = image_u.get(v) {
            equilibrium.insert(v.clone(), val.clone());
        }
    }
    let subsystem = DiscreteSystem {
        name: sys.name.clone(),
        states: sub_states.clone(),
        inputs: sub_inputs,
        updates: transformed[..n - p].to_vec(),
        equilibrium,
        params: sys.params.clone(),
    };
    if let Err(e) = subsystem.validate(cfg.seed) {
        return abort(step, format!("subsystem failed validation: {e}"));
    }
    step.subsystem = Some(subsystem.clone());

    // carry the new coordinates back to the original ones
    let mut next_map: BTreeMap<Symbol, Expr> = BTreeMap::new();
    for (sym, expr) in t_s.forward.iter().chain(&t_u.forward) {
        next_map.insert(sym.clone(), cancel_quotient(&substitute(expr, to_original)));
    }

    let branches = match eliminate_redundant(&subsystem, p, level, cfg, &mut taken) {
        Ok(None) => None,
        Ok(Some(b)) => Some(b),
        Err(e) => return abort(step, format!("redundant input elimination failed: {e}")),
    };

    let mut outcomes = Vec::new();
    match branches {
        None => {
            let mut retained = next_map.clone();
            retained.retain(|k, _| {
                subsystem.states.contains(k) || subsystem.inputs.contains(k)
            });
            let mut all_steps = steps.to_vec();
            all_steps.push(step);
            let mut all_collected = collected.to_vec();
            all_collected.push(Vec::new());
            outcomes.extend(drive(
                &subsystem,
                original,
                &retained,
                &all_collected,
                &all_steps,
                level + 1,
                cfg,
            ));
        }
        Some(branches) => {
            for branch in branches {
                let outputs: Vec<Expr> = branch
                    .redundant
                    .iter()
                    .map(|s| cancel_quotient(&next_map[s]))
                    .collect();

                let mut branch_map = next_map.clone();
                for (h, e) in branch.elim.forward.iter().take(branch.next.m()) {
                    branch_map.insert(h.clone(), cancel_quotient(&substitute(e, &next_map)));
                }
                branch_map.retain(|k, _| {
                    branch.next.states.contains(k) || branch.next.inputs.contains(k)
                });

                let mut branch_step = step.clone();
                branch_step.elimination = Some(branch.elim.clone());
                branch_step.eliminated_outputs = outputs.clone();
                branch_step.assumptions.extend(branch.elim.assumptions.iter().cloned());

                let mut all_steps = steps.to_vec();
                all_steps.push(branch_step);
                let mut all_collected = collected.to_vec();
                all_collected.push(outputs);
                outcomes.extend(drive(
                    &branch.next,
                    original,
                    &branch_map,
                    &all_collected,
                    &all_steps,
                    level + 1,
                    cfg,
                ));
                if !cfg.explore_branches {
                    break;
                }
            }
        }
    }
    outcomes
}

/// Decides flatness of `sys`: runs the decomposition loop, assembles the
/// flat output candidate, and verifies it independently.
pub fn run(sys: &DiscreteSystem, cfg: &DecomposeConfig) -> FlatnessReport {
    let started = Instant::now();
    let mut report = FlatnessReport {
        system: sys.name.clone(),
        verdict: Verdict::Inconclusive,
        flat_output: None,
        alternatives: Vec::new(),
        steps: Vec::new(),
        parametrization: None,
        verified: VerificationSummary::default(),
        assumptions: Vec::new(),
        seed: cfg.seed,
        reason: None,
        elapsed: Duration::ZERO,
    };

    if let Err(e) = sys.validate(cfg.seed) {
        report.reason = Some(format!("system precondition failed: {e}"));
        report.elapsed = started.elapsed();
        return report;
    }

    let identity: BTreeMap<Symbol, Expr> =
        sys.coords().into_iter().map(|s| (s.clone(), Expr::var(&s))).collect();
    let outcomes = drive(sys, sys, &identity, &[], &[], 1, cfg);

    let mut flats: Vec<(Vec<Expr>, Vec<DecompositionStep>)> = Vec::new();
    let mut not_flat: Option<Vec<DecompositionStep>> = None;
    let mut inconclusive: Option<(String, Vec<DecompositionStep>)> = None;
    for o in outcomes {
        match o {
            Outcome::Flat { output, steps } => flats.push((output, steps)),
            Outcome::NotFlat { steps } => {
                not_flat.get_or_insert(steps);
            }
            Outcome::Inconclusive { reason, steps } => {
                inconclusive.get_or_insert((reason, steps));
            }
        }
    }

    if let Some((output, steps)) = flats.first().cloned() {
        report.verdict = Verdict::Flat;
        report.steps = steps;
        for (other, _) in flats.iter().skip(1) {
            let same = |a: &[Expr], b: &[Expr]| {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(x, y)| is_zero(&mk_sub(x.clone(), y.clone())))
            };
            if !same(&output, other)
                && !report.alternatives.iter().any(|alt| same(alt, other))
            {
                report.alternatives.push(other.clone());
            }
        }

        // a constructed flat output must be a function of the states alone
        let input_pure = output.iter().all(|e| {
            e.free_vars().iter().all(|v| !sys.inputs.iter().any(|u| u.base() == v.base()))
        });
        if !input_pure || output.len() != sys.m() {
            report.verdict = Verdict::Inconclusive;
            report.reason =
                Some("constructed output violates the state-only form".into());
            report.elapsed = started.elapsed();
            return report;
        }
        report.flat_output = Some(output.clone());

        if cfg.verify_output {
            match FlatOutputCandidate::new(output, sys) {
                Ok(cand) => {
                    let vcfg = VerifyConfig {
                        seed: cfg.seed,
                        trials: cfg.trials,
                        max_shift: cfg.max_shift,
                        sample_points: cfg.sample_points,
                    };
                    let vr = verify_candidate(sys, &cand, &vcfg);
                    report.verified = VerificationSummary {
                        symbolic: vr.symbolic.is_some(),
                        numeric: vr.numeric.is_some(),
                    };
                    report.parametrization = vr.symbolic;
                    for a in &vr.assumptions {
                        report.assumptions.push(a.to_string());
                    }
                    if !report.verified.symbolic && !report.verified.numeric {
                        report.verdict = Verdict::Inconclusive;
                        report.reason = Some(match vr.refutation {
                            Some(r) => format!("constructed output failed verification: {r}"),
                            None => format!(
                                "constructed output could not be verified{}",
                                vr.note.map(|n| format!(": {n}")).unwrap_or_default()
                            ),
                        });
                    }
                }
                Err(e) => {
                    report.verdict = Verdict::Inconclusive;
                    report.reason = Some(format!("constructed output is malformed: {e}"));
                }
            }
        }
    } else if let Some(steps) = not_flat {
        report.verdict = Verdict::NotFlat;
        report.steps = steps;
    } else if let Some((reason, steps)) = inconclusive {
        report.verdict = Verdict::Inconclusive;
        report.reason = Some(reason);
        report.steps = steps;
    }

    let mut seen = BTreeSet::new();
    for s in &report.steps {
        for a in &s.assumptions {
            let text = a.to_string();
            if seen.insert(text.clone()) {
                report.assumptions.push(text);
            }
        }
    }

    report.elapsed = started.elapsed();
    report
}


fn exprs_json(exprs: &[Expr]) -> Json {
    Json::Array(exprs.iter().map(|e| Json::String(e.to_string())).collect())
}

fn distribution_json(d: &Distribution) -> Json {
    Json::Array(d.generators.iter().map(|g| Json::String(g.to_string())).collect())
}

fn transformation_json(t: &Transformation) -> Json {
    json!({
        "forward": t.forward.iter().map(|(s, e)| format!("{s} = {e}")).collect::<Vec<_>>(),
        "inverse": t.inverse.iter().map(|(s, e)| format!("{s} = {e}")).collect::<Vec<_>>(),
        "targets": t.targets.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
    })
}

fn system_json(sys: &DiscreteSystem) -> Json {
    json!({
        "name": sys.name,
        "states": sys.states.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        "inputs": sys.inputs.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        "updates": sys.updates.iter().map(|e| e.to_string()).collect::<Vec<_>>(),
    })
}

fn step_json(s: &DecompositionStep) -> Json {
    json!({
        "index": s.index,
        "dim_state": s.state_dim,
        "dim_input": s.input_dim,
        "subdistribution": s.subdistribution.as_ref().map(distribution_json),
        "pushforward": s.pushforward.as_ref().map(distribution_json),
        "input_transformation": s.input_transformation.as_ref().map(transformation_json),
        "state_transformation": s.state_transformation.as_ref().map(transformation_json),
        "elimination": s.elimination.as_ref().map(transformation_json),
        "subsystem": s.subsystem.as_ref().map(system_json),
        "eliminated_outputs": exprs_json(&s.eliminated_outputs),
        "terminal_outputs": s.terminal_outputs.as_ref().map(|e| exprs_json(e)),
        "obstruction": s.obstruction.as_ref().map(|e| exprs_json(e)),
        "assumptions": exprs_json(&s.assumptions),
        "note": s.note,
    })
}

impl FlatnessReport {
    pub fn to_json(&self) -> Json {
        json!({
            "system": self.system,
            "verdict": self.verdict.to_string(),
            "flat_output": self.flat_output.as_ref().map(|o| exprs_json(o)),
            "alternatives": self.alternatives.iter().map(|o| exprs_json(o)).collect::<Vec<_>>(),
            "steps": self.steps.iter().map(step_json).collect::<Vec<_>>(),
            "parametrization": self.parametrization.as_ref().map(|p| json!({
                "jets": p.y.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                "orders": p.orders,
                "states": exprs_json(&p.f_x),
                "inputs": exprs_json(&p.f_u),
            })),
            "verified": {
                "symbolic": self.verified.symbolic,
                "numeric": self.verified.numeric,
            },
            "assumptions": self.assumptions,
            "seed": self.seed,
            "reason": self.reason,
            "elapsed_ms": self.elapsed.as_millis() as u64,
        })
    }
}
