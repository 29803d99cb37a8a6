//! Continuation on smoothed objectives: every indicator is replaced by an
//! approximation family at level `delta`, the functional constraint becomes
//! an exact penalty, and `delta` is driven to zero with warm-started descent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::approx::{ApproxFamily, Target};
use crate::direction::{lp_min, prox_step, LinearizedConstraint, Region};
use crate::error::{check_dim, Error, Result};
use crate::functions::{FunctionHandle, PlForm, EPS_ACT};
use crate::model::{PolyhedralSet, ProblemSpec};
use crate::par::Exec;
use crate::stationarity::{
    check_c4_sufficient, check_local_nlp, check_pseudo_b_stationary, check_sign_conditions, descent_at,
    partition, pulled_down, Certificate, Class, LocalNlp, Origin, SignMode, Tolerances,
};

/// An objective with an exact piecewise-linear directional derivative.
pub trait DirectionalObjective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn value_and_form(&self, x: &[f64]) -> Result<(f64, PlForm)>;
}

impl DirectionalObjective for FunctionHandle {
    fn dim(&self) -> usize {
        FunctionHandle::dim(self)
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    fn value_and_form(&self, x: &[f64]) -> Result<(f64, PlForm)> {
        FunctionHandle::value_and_form(self, x)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StopRule {
    pub max_iter: usize,
    /// Stop once the boxed directional-derivative minimum is at least `-dd_tol`.
    pub dd_tol: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub min_step: f64,
    pub feas_tol: f64,
    pub piece_budget: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            max_iter: 500,
            dd_tol: 1e-8,
            armijo: 1e-4,
            backtrack: 0.5,
            min_step: 1e-14,
            feas_tol: 1e-9,
            piece_budget: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum InnerStatus {
    Converged,
    MaxIter,
    /// No step along either candidate direction passed the line search.
    Stalled,
}

#[derive(Clone, Debug, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub value: f64,
    pub dd: f64,
    pub step: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct InnerReport {
    pub x: Vec<f64>,
    pub value: f64,
    /// Minimum of the directional derivative over unit-box steps at `x`.
    pub dd_value: f64,
    pub iterations: usize,
    pub status: InnerStatus,
    pub log: Vec<IterRecord>,
}

/// Relative predicted decrease below which value comparisons are roundoff.
const ROUNDOFF_DECREASE: f64 = 1e-12;

/// Descent to an approximate d-stationary point of `obj` on the set
/// intersected with `constraints <= 0`.
///
/// Each iteration measures stationarity with the exact LP over unit-box
/// steps, then tries a proximal step and the LP direction with Armijo
/// backtracking on the true objective.
pub fn inner_solve(
    obj: &dyn DirectionalObjective,
    set: &PolyhedralSet,
    constraints: &[FunctionHandle],
    x0: &[f64],
    stop: &StopRule,
) -> Result<InnerReport> {
    check_dim(set.dim(), obj.dim())?;
    check_dim(set.dim(), x0.len())?;
    if !set.contains(x0, stop.feas_tol) {
        return Err(Error::Infeasible(format!("start {x0:?} is outside the set")));
    }
    if let Some(i) = constraints.iter().position(|c| c.eval(x0) > stop.feas_tol) {
        return Err(Error::Infeasible(format!("start violates constraint {i}")));
    }
    let mut x = x0.to_vec();
    let mut eta = 1.0;
    let mut log = Vec::new();
    let mut iter = 0;
    loop {
        let (f, form) = obj.value_and_form(&x)?;
        let cons = constraints
            .iter()
            .map(|c| {
                let (v, form) = c.value_and_form(&x)?;
                Ok(LinearizedConstraint { offset: v.min(0.0), form })
            })
            .collect::<Result<Vec<_>>>()?;
        let region = Region::steps(set, &x, 1.0);
        let measure = lp_min(&form, &cons, &region, stop.piece_budget);
        let dd = measure.value;
        let status = if dd >= -stop.dd_tol {
            Some(InnerStatus::Converged)
        } else if iter >= stop.max_iter {
            Some(InnerStatus::MaxIter)
        } else {
            None
        };
        if let Some(status) = status {
            log.push(IterRecord { iter, value: f, dd, step: 0.0 });
            return Ok(InnerReport {
                x,
                value: f,
                dd_value: dd,
                iterations: iter,
                status,
                log,
            });
        }
        let prox = prox_step(&form, &cons, &region, eta, stop.piece_budget);
        let mut accepted = None;
        for (is_prox, v) in prox.into_iter().map(|v| (true, v)).chain([(false, measure.direction.clone())]) {
            let slope = form.eval(&v);
            if !(slope < 0.0) {
                continue;
            }
            let mut tau = 1.0;
            while tau * v.iter().fold(0.0f64, |m, c| m.max(c.abs())) >= stop.min_step {
                let y: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + tau * b).collect();
                let y = set.clamp_to_bounds(&y);
                if set.contains(&y, 1e-12) && constraints.iter().all(|c| c.eval(&y) <= stop.feas_tol) {
                    let fy = obj.value(&y);
                    if fy <= f + stop.armijo * tau * slope {
                        accepted = Some((y, fy, tau, slope, is_prox));
                        break;
                    }
                }
                tau *= stop.backtrack;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((y, fy, tau, slope, is_prox)) = accepted else {
            log.push(IterRecord { iter, value: f, dd, step: 0.0 });
            return Ok(InnerReport {
                x,
                value: f,
                dd_value: dd,
                iterations: iter,
                status: InnerStatus::Stalled,
                log,
            });
        };
        if is_prox && -tau * slope >= ROUNDOFF_DECREASE * f.abs().max(1.0) {
            let ratio = (f - fy) / (-tau * slope);
            if tau < 1.0 {
                eta *= tau;
            } else if ratio > 0.5 {
                eta *= 2.0;
            }
            if ratio < 0.25 {
                eta *= 0.5;
            }
            eta = eta.clamp(1e-12, 1e8);
        }
        log.push(IterRecord { iter, value: f, dd, step: tau });
        x = y;
        iter += 1;
    }
}

// ---------------------------------------------------------------------------
// Approximated objective

/// One approximation family per term.
#[derive(Clone, Debug)]
pub struct TermFamilies {
    pub objective: Vec<ApproxFamily>,
    pub constraint: Vec<ApproxFamily>,
}

impl TermFamilies {
    pub fn uniform(family: &ApproxFamily, problem: &ProblemSpec) -> Result<Self> {
        if family.target() != Target::Heaviside {
            return Err(Error::InvalidFamily(format!(
                "family {} does not approximate the Heaviside function",
                family.tag()
            )));
        }
        Ok(TermFamilies {
            objective: vec![family.clone(); problem.n_objective()],
            constraint: vec![family.clone(); problem.n_constraint()],
        })
    }

    fn check(&self, problem: &ProblemSpec) -> Result<()> {
        check_dim(problem.n_objective(), self.objective.len())?;
        check_dim(problem.n_constraint(), self.constraint.len())?;
        if let Some(f) = self.objective.iter().chain(&self.constraint).find(|f| f.target() != Target::Heaviside) {
            return Err(Error::InvalidFamily(format!(
                "family {} does not approximate the Heaviside function",
                f.tag()
            )));
        }
        Ok(())
    }
}

/// `c + sum_k phi_k theta_k(g_k, delta) + lambda max(sum_l phi_l theta_l(h_l, delta) - b, 0)`.
#[derive(Clone, Debug)]
pub struct ApproximatedObjective<'a> {
    pub problem: &'a ProblemSpec,
    pub families: &'a TermFamilies,
    pub lambda: f64,
    pub delta: f64,
}

impl<'a> ApproximatedObjective<'a> {
    pub fn new(problem: &'a ProblemSpec, families: &'a TermFamilies, lambda: f64, delta: f64) -> Result<Self> {
        families.check(problem)?;
        if !(delta > 0.0) || !(lambda >= 0.0) {
            return Err(Error::InvalidModel(format!("need delta > 0 and lambda >= 0, got {delta}, {lambda}")));
        }
        Ok(ApproximatedObjective { problem, families, lambda, delta })
    }

    /// Approximate indicator values, objective terms then constraint terms.
    pub fn theta_values(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let th = |fams: &[ApproxFamily], terms: &[crate::model::HeavisideTerm]| {
            fams.iter()
                .zip(terms)
                .map(|(f, t)| f.value(t.inner.eval(x), self.delta))
                .collect::<Vec<f64>>()
        };
        (
            th(&self.families.objective, &self.problem.objective_terms),
            th(&self.families.constraint, &self.problem.constraint_terms),
        )
    }

    /// Smoothed left-hand side of the functional constraint.
    pub fn constraint_aggregate(&self, x: &[f64]) -> f64 {
        let (_, tc) = self.theta_values(x);
        self.problem
            .constraint_terms
            .iter()
            .zip(tc)
            .map(|(t, th)| t.multiplier.eval(x) * th)
            .sum()
    }

    fn term_sum(&self, fams: &[ApproxFamily], terms: &[crate::model::HeavisideTerm], x: &[f64]) -> Result<(f64, PlForm)> {
        let mut value = 0.0;
        let mut form = PlForm::zero(self.problem.dim());
        for (fam, t) in fams.iter().zip(terms) {
            let (phi, dphi) = t.multiplier.value_and_form(x)?;
            let (g, dg) = t.inner.value_and_form(x)?;
            let th = fam.value(g, self.delta);
            value += phi * th;
            if th != 0.0 {
                form = form.add(&dphi.scale(th));
            }
            if phi != 0.0 {
                form = form.add(&fam.compose_form(g, self.delta, &dg).scale(phi));
            }
        }
        Ok((value, form.normalized()))
    }
}

impl DirectionalObjective for ApproximatedObjective<'_> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (to, tc) = self.theta_values(x);
        let p = self.problem;
        let obj: f64 = p.objective_terms.iter().zip(to).map(|(t, th)| t.multiplier.eval(x) * th).sum();
        let con: f64 = p.constraint_terms.iter().zip(tc).map(|(t, th)| t.multiplier.eval(x) * th).sum();
        let pen = if p.has_functional_constraint() { self.lambda * (con - p.budget).max(0.0) } else { 0.0 };
        p.base_cost.eval(x) + obj + pen
    }

    fn value_and_form(&self, x: &[f64]) -> Result<(f64, PlForm)> {
        let p = self.problem;
        let (c, dc) = p.base_cost.value_and_form(x)?;
        let (o, dobj) = self.term_sum(&self.families.objective, &p.objective_terms, x)?;
        let mut value = c + o;
        let mut form = dc.add(&dobj);
        if p.has_functional_constraint() {
            let (s, ds) = self.term_sum(&self.families.constraint, &p.constraint_terms, x)?;
            let r = s - p.budget;
            let tie = EPS_ACT * p.budget.abs().max(1.0);
            value += self.lambda * r.max(0.0);
            if r > tie {
                form = form.add(&ds.scale(self.lambda));
            } else if r >= -tie {
                form = form.add(&ds.max_with_zero().scale(self.lambda));
            }
        }
        Ok((value, form.normalized()))
    }
}

/// Value and directional-derivative form of the approximated objective.
pub fn eval_approx(obj: &ApproximatedObjective<'_>, x: &[f64]) -> Result<(f64, PlForm)> {
    obj.value_and_form(x)
}

// ---------------------------------------------------------------------------
// Continuation driver

#[derive(Clone, Debug, Serialize)]
pub struct Schedule {
    pub delta0: f64,
    pub rho: f64,
    pub stages: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { delta0: 0.5, rho: 0.5, stages: 24 }
    }
}

impl Schedule {
    pub fn deltas(&self) -> Vec<f64> {
        (0..self.stages).map(|k| self.delta0 * self.rho.powi(k as i32)).collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ContinuationOptions {
    pub schedule: Schedule,
    pub stop: StopRule,
    /// Limit flagged converged when the last three moves are within this sup-norm.
    pub x_tol: f64,
    pub eps_part: f64,
    pub feas_tol: f64,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            schedule: Schedule::default(),
            stop: StopRule::default(),
            x_tol: 1e-7,
            eps_part: 1e-7,
            feas_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StageRecord {
    pub stage: usize,
    pub delta: f64,
    pub x: Vec<f64>,
    pub approx_objective: f64,
    /// Exact objective at the stage point.
    pub objective: f64,
    pub functional: f64,
    pub dd_value: f64,
    pub iterations: usize,
    pub status: InnerStatus,
    pub theta_objective: Vec<f64>,
    pub theta_constraint: Vec<f64>,
}

/// Approximate indicator values along the stages for a term that is
/// zero-class at the limit.
#[derive(Clone, Debug, Serialize)]
pub struct ZeroClassSequence {
    pub origin: Origin,
    pub values: Vec<f64>,
    /// Mean of the last three values, an estimate of the accumulation value.
    pub estimate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContinuationTrace {
    pub stages: Vec<StageRecord>,
    pub limit: Vec<f64>,
    pub converged: bool,
    pub lambda: f64,
    pub sequences: Vec<ZeroClassSequence>,
    /// Objective at the limit with zero-class indicators at their zero-set
    /// value: cost plus the positive-class terms.
    pub objective: f64,
    /// Objective evaluated at the last stage point as is.
    pub raw_objective: f64,
    /// Functional constraint with the same convention as `objective`.
    pub functional: f64,
    pub infeasible: bool,
    /// Some stage ended without reaching the stationarity tolerance.
    pub stage_failure: bool,
}

/// Runs the schedule from `x0`, warm-starting each stage at the previous point.
pub fn run_continuation(
    problem: &ProblemSpec,
    families: &TermFamilies,
    lambda: f64,
    options: &ContinuationOptions,
    x0: &[f64],
) -> Result<ContinuationTrace> {
    let s = &options.schedule;
    if !(s.delta0 > 0.0) || !(s.rho > 0.0 && s.rho < 1.0) || s.stages == 0 {
        return Err(Error::InvalidModel(format!(
            "schedule needs delta0 > 0, rho in (0, 1) and at least one stage, got {s:?}"
        )));
    }
    families.check(problem)?;
    let mut x = x0.to_vec();
    let mut stages = Vec::with_capacity(s.stages);
    for (k, delta) in s.deltas().into_iter().enumerate() {
        let obj = ApproximatedObjective::new(problem, families, lambda, delta)?;
        let rep = inner_solve(&obj, &problem.feasible_set, &[], &x, &options.stop)?;
        x = rep.x;
        let (to, tc) = obj.theta_values(&x);
        stages.push(StageRecord {
            stage: k,
            delta,
            x: x.clone(),
            approx_objective: rep.value,
            objective: problem.phi(&x),
            functional: problem.functional(&x),
            dd_value: rep.dd_value,
            iterations: rep.iterations,
            status: rep.status,
            theta_objective: to,
            theta_constraint: tc,
        });
    }
    let n = stages.len();
    let converged = n >= 4
        && (n - 3..n).all(|i| {
            stages[i].x.iter().zip(&stages[i - 1].x).all(|(a, b)| (a - b).abs() <= options.x_tol)
        });
    let part = partition(problem, &x, options.eps_part);
    let mut sequences = Vec::new();
    let mean_tail = |v: &[f64]| {
        let t = &v[v.len().saturating_sub(3)..];
        t.iter().sum::<f64>() / t.len() as f64
    };
    for k in part.objective_in(Class::Zero) {
        let values: Vec<f64> = stages.iter().map(|s| s.theta_objective[k]).collect();
        sequences.push(ZeroClassSequence { origin: Origin::Objective(k), estimate: mean_tail(&values), values });
    }
    for l in part.constraint_in(Class::Zero) {
        let values: Vec<f64> = stages.iter().map(|s| s.theta_constraint[l]).collect();
        sequences.push(ZeroClassSequence { origin: Origin::Constraint(l), estimate: mean_tail(&values), values });
    }
    let objective = problem.base_cost.eval(&x)
        + part.objective_in(Class::Positive).iter().map(|&k| problem.objective_terms[k].multiplier.eval(&x)).sum::<f64>();
    let functional: f64 = part
        .constraint_in(Class::Positive)
        .iter()
        .map(|&l| problem.constraint_terms[l].multiplier.eval(&x))
        .sum();
    Ok(ContinuationTrace {
        stage_failure: stages.iter().any(|s| s.status != InnerStatus::Converged),
        objective,
        raw_objective: problem.phi(&x),
        infeasible: functional > problem.budget + options.feas_tol,
        functional,
        limit: x,
        converged,
        lambda,
        sequences,
        stages,
    })
}

/// Independent runs from several starts, merged in start order.
pub fn run_multistart(
    problem: &ProblemSpec,
    families: &TermFamilies,
    lambda: f64,
    options: &ContinuationOptions,
    starts: &[Vec<f64>],
    exec: Exec,
) -> Vec<Result<ContinuationTrace>> {
    exec.map(starts, |x0| run_continuation(problem, families, lambda, options, x0))
}

/// Deterministic start points: the set's center followed by seeded samples.
pub fn start_points(set: &PolyhedralSet, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<f64>> = set.center().into_iter().collect();
    while out.len() < count {
        match set.sample(&mut rng, 10_000) {
            Some(p) => out.push(p),
            None => break,
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Diagnostics

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ConditionStatus {
    Pass,
    Fail,
    Unverified,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub status: ConditionStatus,
    pub detail: String,
}

/// Stationarity data for the problem with the zero-class indicators replaced
/// by their accumulation values.
#[derive(Clone, Debug, Serialize)]
pub struct WeakReport {
    pub xi: Vec<(usize, f64)>,
    pub mu: Vec<(usize, f64)>,
    pub row_value: f64,
    pub budget: f64,
    pub row_satisfied: bool,
    pub certificate: Option<Certificate>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticReport {
    pub conditions: Vec<ConditionCheck>,
    pub certificate: Option<Certificate>,
    pub weak: Option<WeakReport>,
    pub notes: Vec<String>,
}

impl DiagnosticReport {
    pub fn status(&self, name: &str) -> ConditionStatus {
        self.conditions
            .iter()
            .find(|c| c.name == name)
            .map_or(ConditionStatus::Unverified, |c| c.status)
    }
}

/// Final zero-class values above this fail the vanishing-limit condition.
pub const C3_TOL: f64 = 1e-3;
/// Sup-norm radius of the neighborhood for the pointwise sign condition.
pub const SIGN_RADIUS: f64 = 0.05;
/// Row slack accepted for the weak functional row.
pub const WEAK_ROW_TOL: f64 = 1e-6;

fn check(name: &'static str, status: ConditionStatus, detail: impl Into<String>) -> ConditionCheck {
    ConditionCheck { name, status, detail: detail.into() }
}

fn pass_if(ok: bool) -> ConditionStatus {
    if ok {
        ConditionStatus::Pass
    } else {
        ConditionStatus::Fail
    }
}

/// Reports each convergence condition as pass, fail or unverified, certifies
/// the limit and, when the zero-class limits do not vanish, emits the weak report.
pub fn diagnose_conditions(trace: &ContinuationTrace, problem: &ProblemSpec, tol: &Tolerances) -> Result<DiagnosticReport> {
    let x = &trace.limit;
    let n = problem.dim();
    let part = partition(problem, x, tol.eps_part);
    let kz = part.objective_in(Class::Zero);
    let lz = part.constraint_in(Class::Zero);
    let zero_terms: Vec<(Origin, &crate::model::HeavisideTerm)> = kz
        .iter()
        .map(|&k| (Origin::Objective(k), &problem.objective_terms[k]))
        .chain(lz.iter().map(|&l| (Origin::Constraint(l), &problem.constraint_terms[l])))
        .collect();
    let mut conditions = Vec::new();

    // Multipliers of zero-class terms nonnegative near the limit.
    if zero_terms.is_empty() {
        conditions.push(check("C1", ConditionStatus::Pass, "no zero-class terms"));
    } else {
        let signs = check_sign_conditions(problem, &SignMode::Near { center: x.clone(), radius: SIGN_RADIUS }, 21)?;
        let relevant: Vec<_> = signs.iter().filter(|s| zero_terms.iter().any(|(o, _)| *o == s.origin)).collect();
        let ok = relevant.iter().all(|s| s.passed);
        let exact = relevant.iter().all(|s| s.exact);
        let min = relevant.iter().map(|s| s.min_value).fold(f64::INFINITY, f64::min);
        conditions.push(check(
            "C1",
            pass_if(ok),
            format!("min multiplier {min} within radius {SIGN_RADIUS} ({})", if exact { "exact" } else { "sampled" }),
        ));
    }

    // Decrease of zero-class inner functions persists near the limit.
    if zero_terms.iter().all(|(_, t)| t.inner.is_convex() && t.inner.is_piecewise_affine()) {
        conditions.push(check("C2", ConditionStatus::Pass, "zero-class inner functions are convex piecewise affine"));
    } else {
        conditions.push(sampled_c2(problem, x, &zero_terms, tol)?);
    }

    // Zero-class approximate indicators vanish along the stages.
    let mut c3_ok = true;
    let mut details = Vec::new();
    for s in &trace.sequences {
        let last = *s.values.last().unwrap_or(&0.0);
        let tail = &s.values[s.values.len().saturating_sub(3)..];
        let trend = tail.windows(2).all(|w| w[1] <= w[0] + 1e-12);
        let ok = last <= C3_TOL && trend;
        c3_ok &= ok;
        details.push(format!("{:?}: final {last:.3e}, estimate {:.6}", s.origin, s.estimate));
    }
    conditions.push(check(
        "C3",
        pass_if(c3_ok),
        if details.is_empty() { "no zero-class terms".to_string() } else { details.join("; ") },
    ));

    // Descent of the functional constraint at infeasible stage points.
    let infeasible: Vec<Vec<f64>> = trace
        .stages
        .iter()
        .filter(|s| s.functional > problem.budget + tol.feas_tol)
        .map(|s| s.x.clone())
        .collect();
    if !problem.has_functional_constraint() {
        conditions.push(check("C4", ConditionStatus::Pass, "no functional constraint"));
    } else if infeasible.is_empty() {
        conditions.push(check("C4", ConditionStatus::Unverified, "no infeasible stage point to test"));
    } else {
        let r = check_c4_sufficient(problem, &infeasible, false, tol)?;
        let worst = r.samples.iter().map(|s| s.value).fold(f64::NEG_INFINITY, f64::max);
        conditions.push(check(
            "C4",
            pass_if(r.passed),
            format!("{} infeasible stage points, worst unit-direction rate {worst}", r.samples.len()),
        ));
    }

    // Clarke regularity of the functions active at the limit.
    let regular = |f: &FunctionHandle| f.is_clarke_regular();
    let mut c5 = regular(&problem.base_cost);
    for k in part.objective_in(Class::Positive) {
        c5 &= regular(&problem.objective_terms[k].multiplier);
    }
    for l in part.constraint_in(Class::Positive) {
        c5 &= regular(&problem.constraint_terms[l].multiplier);
    }
    let c5_status = if c5 { ConditionStatus::Pass } else { ConditionStatus::Unverified };
    conditions.push(check("C5", c5_status, "smooth or convex handles pass; others are not checked"));

    // Strengthened descent at the limit.
    if !problem.has_functional_constraint() {
        conditions.push(check("C4'", ConditionStatus::Pass, "no functional constraint"));
    } else {
        let d = descent_at(problem, x, true, tol)?;
        conditions.push(check("C4'", pass_if(d.passed), format!("unit-direction rate {}", d.value)));
    }
    let c5s = c5 && zero_terms.iter().all(|(_, t)| regular(&t.multiplier));
    let c5s_status = if c5s { ConditionStatus::Pass } else { ConditionStatus::Unverified };
    conditions.push(check("C5'", c5s_status, "adds zero-class multipliers"));

    let mut notes = vec![format!(
        "stage points are approximately d-stationary: boxed directional-derivative minimum >= -{:e}",
        1e-8
    )];
    if trace.stage_failure {
        notes.push("at least one stage stopped before reaching the stationarity tolerance".into());
    }
    let certificate = match check_pseudo_b_stationary(problem, x, tol) {
        Ok(c) => Some(c),
        Err(Error::Infeasible(m)) => {
            notes.push(format!("limit is infeasible: {m}"));
            None
        }
        Err(e) => return Err(e),
    };

    let weak = if c3_ok {
        None
    } else {
        let est = |o: Origin| trace.sequences.iter().find(|s| s.origin == o).map_or(0.0, |s| s.estimate.clamp(0.0, 1.0));
        let xi: Vec<(usize, f64)> = kz.iter().map(|&k| (k, est(Origin::Objective(k)))).collect();
        let mu: Vec<(usize, f64)> = lz.iter().map(|&l| (l, est(Origin::Constraint(l)))).collect();
        let pd = pulled_down(problem, x, tol.eps_part);
        let mut objective = pd.objective.clone();
        for &(k, w) in &xi {
            objective = objective.add(&problem.objective_terms[k].multiplier.scale(w));
        }
        let mut constraints: Vec<FunctionHandle> = pd.constraints.iter().map(|c| c.function.clone()).collect();
        let mut row_value = 0.0;
        if let Some(r) = &pd.functional_row {
            let mut row = r.function.clone();
            for &(l, w) in &mu {
                row = row.add(&problem.constraint_terms[l].multiplier.scale(w));
            }
            row_value = row.eval(x);
            constraints.push(row.sub(&FunctionHandle::constant(r.budget, n)));
        }
        let mut wnotes = vec!["accumulation values estimated as the mean of the last three stages".to_string()];
        let nlp = LocalNlp { objective, constraints, set: problem.feasible_set.clone() };
        let certificate = match check_local_nlp(&nlp, x, tol) {
            Ok(c) => Some(c),
            Err(Error::Infeasible(m)) => {
                wnotes.push(format!("limit infeasible for the weak problem: {m}"));
                None
            }
            Err(e) => return Err(e),
        };
        Some(WeakReport {
            xi,
            mu,
            row_value,
            budget: problem.budget,
            row_satisfied: !problem.has_functional_constraint() || row_value <= problem.budget + WEAK_ROW_TOL,
            certificate,
            notes: wnotes,
        })
    };
    Ok(DiagnosticReport { conditions, certificate, weak, notes })
}

/// Sampled test: directions that do not increase any zero-class inner function
/// at the limit must not increase them at nearby points either.
fn sampled_c2(
    problem: &ProblemSpec,
    x: &[f64],
    zero_terms: &[(Origin, &crate::model::HeavisideTerm)],
    tol: &Tolerances,
) -> Result<ConditionCheck> {
    use rand::Rng;
    let n = problem.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(tol.seed ^ 0xc2);
    let tangent = problem.feasible_set.tangent_cone(x, tol.eps_part);
    let forms = zero_terms
        .iter()
        .map(|(_, t)| t.inner.dd_form(x))
        .collect::<Result<Vec<_>>>()?;
    let mut tested = 0;
    for _ in 0..400 {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        if !tangent.contains(&v, 0.0) || forms.iter().any(|f| f.eval(&v) > 0.0) {
            continue;
        }
        for _ in 0..5 {
            let y: Vec<f64> = x.iter().map(|c| c + 1e-3 * rng.gen_range(-1.0..=1.0)).collect();
            if !problem.feasible_set.contains(&y, 0.0) {
                continue;
            }
            tested += 1;
            for (o, t) in zero_terms {
                let d = t.inner.dir_derivative(&y, &v)?;
                if d > 1e-9 {
                    return Ok(check("C2", ConditionStatus::Fail, format!("{o:?}: rate {d} at {y:?} along {v:?}")));
                }
            }
        }
    }
    Ok(if tested == 0 {
        check("C2", ConditionStatus::Unverified, "no admissible direction sampled")
    } else {
        check("C2", ConditionStatus::Pass, format!("sampled {tested} point-direction pairs"))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{default_fd_steps, fd_dir_derivative_oracle};
    use crate::model::{build_l0, HeavisideTerm, LinearInequality};
    use proptest::prelude::*;

    fn h(src: &str, n: usize) -> FunctionHandle {
        FunctionHandle::parse(src, n).unwrap()
    }

    fn l0_1d(shift: f64) -> ProblemSpec {
        ProblemSpec::new(
            h(&format!("(x1 - {shift})^2"), 1),
            build_l0(&[0.5]).unwrap(),
            vec![],
            None,
            PolyhedralSet::boxed(vec![-2.0], vec![2.0]).unwrap(),
        )
        .unwrap()
    }

    /// Brute-force minimum over a uniform grid of the box.
    fn grid_min(f: &dyn Fn(&[f64]) -> f64, lo: &[f64], hi: &[f64], res: usize, keep: &dyn Fn(&[f64]) -> bool) -> (f64, Vec<f64>) {
        let pts = crate::stationarity::box_grid(lo, hi, res);
        pts.into_iter()
            .filter(|p| keep(p))
            .map(|p| (f(&p), p))
            .fold((f64::INFINITY, vec![]), |a, b| if b.0 < a.0 { b } else { a })
    }

    #[test]
    fn smooth_convex_matches_grid() {
        let f = h("(x1 - 0.3)^2 + 2 * (x2 + 0.2)^2 + 0.5 * x1 * x2", 2);
        let set = PolyhedralSet::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let r = inner_solve(&f, &set, &[], &[0.9, 0.9], &StopRule::default()).unwrap();
        assert_eq!(r.status, InnerStatus::Converged);
        let (v, p) = grid_min(&|x| f.eval(x), &[-1.0, -1.0], &[1.0, 1.0], 1001, &|_| true);
        assert!((r.value - v).abs() < 1e-4, "{} vs {v} at {p:?}", r.value);
        assert!(r.x.iter().zip(&p).all(|(a, b)| (a - b).abs() < 5e-3));
    }

    #[test]
    fn projected_minimizer_on_a_row() {
        let f = h("(x1 - 2)^2 + (x2 - 2)^2", 2);
        let set = PolyhedralSet::new(
            2,
            vec![LinearInequality { a: vec![1.0, 1.0], d: 2.0 }],
            vec![-1.0, -1.0],
            vec![3.0, 3.0],
        )
        .unwrap();
        let r = inner_solve(&f, &set, &[], &[0.0, -1.0], &StopRule::default()).unwrap();
        assert_eq!(r.status, InnerStatus::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn stationary_start_takes_no_step() {
        let f = h("(x1 - 0.5)^2", 1);
        let set = PolyhedralSet::boxed(vec![-1.0], vec![1.0]).unwrap();
        let r = inner_solve(&f, &set, &[], &[0.5], &StopRule::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.status, InnerStatus::Converged);
    }

    #[test]
    fn nonconvex_terminal_point_is_stationary_by_finite_differences() {
        let f = h("x1^4 - x1^2 + 0.1 * x1", 1);
        let set = PolyhedralSet::boxed(vec![-2.0], vec![2.0]).unwrap();
        let r = inner_solve(&f, &set, &[], &[1.8], &StopRule::default()).unwrap();
        assert_eq!(r.status, InnerStatus::Converged);
        let g = |x: &[f64]| f.eval(x);
        for d in [1.0, -1.0] {
            let fd = fd_dir_derivative_oracle(&g, &r.x, &[d], &default_fd_steps(1.0));
            assert!(fd >= -1e-6, "dd {fd} along {d} at {:?}", r.x);
        }
    }

    #[test]
    fn nonlinear_constraint_is_respected() {
        // Minimize x1 + x2 on the unit disk.
        let f = h("x1 + x2", 2);
        let disk = h("x1^2 + x2^2 - 1", 2);
        let set = PolyhedralSet::boxed(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let r = inner_solve(&f, &set, &[disk.clone()], &[0.0, 0.0], &StopRule::default()).unwrap();
        assert!(disk.eval(&r.x) <= 1e-9);
        assert!((r.value + 2f64.sqrt()).abs() < 1e-3, "{}", r.value);
    }

    #[test]
    fn flat_region_value_is_cost_plus_weight() {
        let p = l0_1d(1.0);
        let fams = TermFamilies::uniform(&ApproxFamily::modified_hinge(), &p).unwrap();
        let obj = ApproximatedObjective::new(&p, &fams, 0.0, 1e-4).unwrap();
        let (v, _) = eval_approx(&obj, &[1.5]).unwrap();
        assert!((v - (0.25 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn penalty_below_budget_contributes_nothing() {
        let p = ProblemSpec::new(
            h("x1^2", 1),
            vec![],
            vec![HeavisideTerm::open(h("x1", 1), h("x1", 1))],
            Some(1.0),
            PolyhedralSet::boxed(vec![-2.0], vec![2.0]).unwrap(),
        )
        .unwrap();
        let fams = TermFamilies::uniform(&ApproxFamily::modified_hinge(), &p).unwrap();
        let obj = ApproximatedObjective::new(&p, &fams, 10.0, 1e-3).unwrap();
        let (v, form) = eval_approx(&obj, &[0.5]).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
        assert!((form.eval(&[1.0]) - 1.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn approximated_form_matches_finite_differences(
            x in prop::collection::vec(-1.5..1.5f64, 2),
            v in prop::collection::vec(-1.0..1.0f64, 2),
            d in 0usize..3,
        ) {
            let p = ProblemSpec::new(
                h("(x1 - 1)^2 + x1 * x2", 2),
                vec![
                    HeavisideTerm::open(h("1 + x2^2", 2), h("x1 - 0.5 * x2", 2)),
                    HeavisideTerm::open(h("0.7", 2), h("max(x2, -x1)", 2)),
                ],
                vec![HeavisideTerm::open(h("1 + 0.5 * x1", 2), h("x2 - 0.1", 2))],
                Some(0.6),
                PolyhedralSet::boxed(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap(),
            ).unwrap();
            let fams = TermFamilies::uniform(&ApproxFamily::modified_hinge(), &p).unwrap();
            let delta = [0.5, 0.1, 0.01][d];
            let obj = ApproximatedObjective::new(&p, &fams, 3.0, delta).unwrap();
            let (_, form) = eval_approx(&obj, &x).unwrap();
            let f = |y: &[f64]| obj.value(y);
            let fd = fd_dir_derivative_oracle(&f, &x, &v, &default_fd_steps(1e-3));
            let dd = form.eval(&v);
            prop_assert!((dd - fd).abs() <= 1e-4 * fd.abs().max(1.0), "dd {} fd {}", dd, fd);
        }

        #[test]
        fn accepted_steps_never_increase_the_objective(
            a in -1.0..1.0f64, b in -1.0..1.0f64, c in 0.0..1.0f64,
            x0 in prop::collection::vec(-1.0..1.0f64, 2),
        ) {
            let f = h(&format!("(x1 - {a})^2 + 3 * (x2 - {b})^2 + {c} * abs(x1 + x2)"), 2);
            let set = PolyhedralSet::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
            let r = inner_solve(&f, &set, &[], &x0, &StopRule::default()).unwrap();
            for w in r.log.windows(2) {
                prop_assert!(w[1].value <= w[0].value);
            }
        }
    }

    #[test]
    fn l0_continuation_limit_is_certified() {
        let p = l0_1d(1.0);
        let fams = TermFamilies::uniform(&ApproxFamily::modified_hinge(), &p).unwrap();
        let t = run_continuation(&p, &fams, 0.0, &ContinuationOptions::default(), &[0.5]).unwrap();
        assert!(t.converged);
        assert!((t.limit[0] - 1.0).abs() < 1e-8, "{:?}", t.limit);
        let d = diagnose_conditions(&t, &p, &Tolerances::default()).unwrap();
        assert!(d.certificate.unwrap().verdict.is_stationary());
        assert!(t.stages.windows(2).all(|w| w[1].delta < w[0].delta));
    }

    #[test]
    fn shoulder_instance_fails_vanishing_limits_and_emits_weak_report() {
        let (p, fams, schedule, x0) = crate::instances::vanishing_shoulder();
        let opts = ContinuationOptions { schedule, ..Default::default() };
        let t = run_continuation(&p, &fams, 3.0, &opts, &x0).unwrap();
        assert!(t.converged && t.limit[0].abs() < 1e-7, "{:?}", t.limit);
        let d = diagnose_conditions(&t, &p, &Tolerances::default()).unwrap();
        assert_eq!(d.status("C3"), ConditionStatus::Fail);
        let w = d.weak.clone().expect("weak report");
        assert!(w.row_satisfied, "{w:?}");
        assert!(w.xi.is_empty());
        assert_eq!(w.mu.len(), 1);
        assert!((w.mu[0].1 - 0.4).abs() < 1e-6, "{:?}", w.mu);
        assert_eq!(d.status("C4'"), ConditionStatus::Pass);
        assert_eq!(d.status("C4"), ConditionStatus::Pass);
        assert!(w.certificate.unwrap().verdict.is_stationary());
    }
}
