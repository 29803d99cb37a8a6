//! Epigraphical lifting with an exact penalty.
//!
//! Each term `phi 1(g > 0)` is replaced by an auxiliary variable bounded below
//! by the product, whose epigraph is the union of an "up" piece
//! (`t >= phi`, `g >= 0`) and a "down" piece (`t >= 0`, `g <= 0`). The
//! functional constraint is moved into the objective as
//! `lambda max(sum s - b, 0)`. Branches fix one piece per term and are solved
//! independently; the auxiliary variables are eliminated at their optimal
//! values `phi` (up) or `0` (down), so every branch is an NLP in `x`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::continuation::{inner_solve, start_points, InnerReport, InnerStatus, StopRule};
use crate::direction::{lp_min, LinearizedConstraint, Region};
use crate::error::{check_dim, Error, Result};
use crate::functions::{lipschitz_of, FunctionHandle, LipschitzEstimate, EPS_ACT};
use crate::model::{HeavisideTerm, PolyhedralSet, ProblemSpec};
use crate::par::Exec;
use crate::stationarity::{check_pseudo_b_stationary, Certificate, Tolerances};

/// `min(max(phi - t, -g), max(g, -t))`; nonpositive exactly on the epigraph
/// of `phi 1(g > 0)` when `phi >= 0` where `g = 0`.
pub fn epi_residual(t: f64, x: &[f64], term: &HeavisideTerm) -> f64 {
    let phi = term.multiplier.eval(x);
    let g = term.inner.eval(x);
    (phi - t).max(-g).min(g.max(-t))
}

pub fn epi_membership(t: f64, x: &[f64], term: &HeavisideTerm) -> bool {
    epi_residual(t, x, term) <= 0.0
}

/// `phi(x) 1(g(x) > 0)`.
pub fn product_value(term: &HeavisideTerm, x: &[f64]) -> f64 {
    term.eval(x)
}

/// The lifted problem in `(x, t, s)`.
#[derive(Clone, Debug)]
pub struct LiftedProblem {
    pub base: ProblemSpec,
    pub lambda: f64,
}

impl LiftedProblem {
    pub fn new(base: ProblemSpec, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidModel(format!("penalty {lambda} must be finite and nonnegative")));
        }
        Ok(LiftedProblem { base, lambda })
    }

    /// `c(x) + sum t + lambda max(sum s - b, 0)`.
    pub fn objective(&self, x: &[f64], t: &[f64], s: &[f64]) -> f64 {
        let pen = if self.base.has_functional_constraint() {
            self.lambda * (s.iter().sum::<f64>() - self.base.budget).max(0.0)
        } else {
            0.0
        };
        self.base.base_cost.eval(x) + t.iter().sum::<f64>() + pen
    }

    /// Epigraph residuals, objective terms first.
    pub fn epigraph_residuals(&self, x: &[f64], t: &[f64], s: &[f64]) -> Vec<f64> {
        let p = &self.base;
        p.objective_terms
            .iter()
            .zip(t)
            .chain(p.constraint_terms.iter().zip(s))
            .map(|(term, &v)| epi_residual(v, x, term))
            .collect()
    }

    pub fn is_feasible(&self, x: &[f64], t: &[f64], s: &[f64], tol: f64) -> bool {
        t.len() == self.base.n_objective()
            && s.len() == self.base.n_constraint()
            && self.base.feasible_set.contains(x, tol)
            && self.epigraph_residuals(x, t, s).iter().all(|&r| r <= tol)
    }
}

// ---------------------------------------------------------------------------
// Penalty parameter

#[derive(Clone, Debug, Serialize)]
pub struct PenaltyChoice {
    pub lambda: f64,
    pub safety: f64,
    pub lip_cost: Option<LipschitzEstimate>,
    /// Largest estimate over the objective multipliers.
    pub lip_multiplier: Option<LipschitzEstimate>,
    pub objective_terms: usize,
    /// No functional constraint, so no penalty is needed.
    pub skipped: bool,
}

pub const LIPSCHITZ_SAMPLES: usize = 4000;

/// `lambda = safety (Lip_c + K Lip_phi) + 1`.
pub fn choose_penalty(problem: &ProblemSpec, safety: f64, seed: u64) -> Result<PenaltyChoice> {
    if !(safety >= 1.0) {
        return Err(Error::InvalidModel(format!("safety factor {safety} must be at least 1")));
    }
    let k = problem.n_objective();
    if !problem.has_functional_constraint() {
        return Ok(PenaltyChoice {
            lambda: 0.0,
            safety,
            lip_cost: None,
            lip_multiplier: None,
            objective_terms: k,
            skipped: true,
        });
    }
    let set = &problem.feasible_set;
    let lc = lipschitz_of(&problem.base_cost, set, LIPSCHITZ_SAMPLES, seed)?;
    let mut lphi: Option<LipschitzEstimate> = None;
    for (i, t) in problem.objective_terms.iter().enumerate() {
        let e = lipschitz_of(&t.multiplier, set, LIPSCHITZ_SAMPLES, seed.wrapping_add(1 + i as u64))?;
        if lphi.map_or(true, |b| e.value > b.value) {
            lphi = Some(e);
        }
    }
    let lambda = safety * (lc.value + k as f64 * lphi.map_or(0.0, |e| e.value)) + 1.0;
    Ok(PenaltyChoice {
        lambda,
        safety,
        lip_cost: Some(lc),
        lip_multiplier: lphi,
        objective_terms: k,
        skipped: false,
    })
}

// ---------------------------------------------------------------------------
// Branch solves

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Branch {
    /// `t >= phi`, `g >= 0`.
    Up,
    /// `t >= 0`, `g <= 0`.
    Down,
}

/// One piece per term, objective terms first. Bit `i` of the index set means
/// term `i` is up.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BranchAssignment(pub Vec<Branch>);

impl BranchAssignment {
    pub fn from_index(index: usize, terms: usize) -> Self {
        BranchAssignment((0..terms).map(|i| if index >> i & 1 == 1 { Branch::Up } else { Branch::Down }).collect())
    }

    pub fn label(&self) -> String {
        self.0.iter().map(|b| if *b == Branch::Up { 'U' } else { 'D' }).collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LiftOptions {
    pub branch_budget: usize,
    pub starts: usize,
    pub seed: u64,
    pub stop: StopRule,
    pub exec: Exec,
    /// Branch minima within this (relative to `max(1, |best|)`) are ties.
    pub tie_tol: f64,
    pub tolerances: Tolerances,
}

impl Default for LiftOptions {
    fn default() -> Self {
        LiftOptions {
            branch_budget: 4096,
            starts: 4,
            seed: 0,
            stop: StopRule::default(),
            exec: Exec::Parallel,
            tie_tol: 1e-8,
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub enum BranchStatus {
    Solved,
    /// No start could be driven onto the branch's constraint set.
    Infeasible,
    Failed(String),
}

#[derive(Clone, Debug, Serialize)]
pub struct BranchOutcome {
    pub index: usize,
    pub assignment: BranchAssignment,
    pub status: BranchStatus,
    /// Best inner run over the starts.
    pub report: Option<InnerReport>,
    pub start: Option<usize>,
    pub t: Vec<f64>,
    pub s: Vec<f64>,
}

impl BranchOutcome {
    pub fn value(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.value)
    }

    pub fn converged(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.status == InnerStatus::Converged)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AuxCase {
    /// `sum pi < b`: strictly feasible, the budget has slack.
    Slack,
    /// `sum pi = b` within tolerance.
    Exact,
    /// `sum pi > b`: the recovered point violates the functional constraint.
    Infeasible,
    /// No functional constraint.
    Unconstrained,
}

#[derive(Clone, Debug, Serialize)]
pub struct RecoveredAux {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub case: AuxCase,
    /// `sum_l pi_l(x) - b`.
    pub excess: f64,
    pub lifted_before: f64,
    pub lifted_after: f64,
}

/// Sets every auxiliary variable to its product value at `x` and tags the
/// functional constraint. Fails on an epigraph-infeasible input.
pub fn recover_auxiliary(lifted: &LiftedProblem, x: &[f64], t: &[f64], s: &[f64], tol: f64) -> Result<RecoveredAux> {
    let p = &lifted.base;
    check_dim(p.dim(), x.len())?;
    check_dim(p.n_objective(), t.len())?;
    check_dim(p.n_constraint(), s.len())?;
    if let Some((i, r)) = lifted
        .epigraph_residuals(x, t, s)
        .into_iter()
        .enumerate()
        .find(|(_, r)| !(*r <= tol))
    {
        return Err(Error::Infeasible(format!("auxiliary variable {i} is below the epigraph (residual {r:e})")));
    }
    let nt: Vec<f64> = p.objective_terms.iter().map(|term| product_value(term, x)).collect();
    let ns: Vec<f64> = p.constraint_terms.iter().map(|term| product_value(term, x)).collect();
    let excess = ns.iter().sum::<f64>() - p.budget;
    let case = if !p.has_functional_constraint() {
        AuxCase::Unconstrained
    } else if excess < -tol {
        AuxCase::Slack
    } else if excess <= tol {
        AuxCase::Exact
    } else {
        AuxCase::Infeasible
    };
    Ok(RecoveredAux {
        lifted_before: lifted.objective(x, t, s),
        lifted_after: lifted.objective(x, &nt, &ns),
        t: nt,
        s: ns,
        case,
        excess,
    })
}

struct BranchNlp {
    objective: FunctionHandle,
    constraints: Vec<FunctionHandle>,
    /// Objective without the penalty and the budget excess, when penalized.
    unpenalized: Option<(FunctionHandle, FunctionHandle)>,
}

fn branch_nlp(problem: &ProblemSpec, lambda: f64, a: &BranchAssignment) -> BranchNlp {
    let n = problem.dim();
    let k = problem.n_objective();
    let terms: Vec<&HeavisideTerm> = problem.objective_terms.iter().chain(&problem.constraint_terms).collect();
    let mut objective = problem.base_cost.clone();
    let mut row = Vec::new();
    let mut constraints = Vec::with_capacity(terms.len());
    for (i, (term, b)) in terms.iter().zip(&a.0).enumerate() {
        match b {
            Branch::Up => {
                if i < k {
                    objective = objective.add(&term.multiplier);
                } else {
                    row.push(term.multiplier.clone());
                }
                constraints.push(term.inner.neg());
            }
            Branch::Down => constraints.push(term.inner.clone()),
        }
    }
    let mut unpenalized = None;
    if problem.has_functional_constraint() && lambda > 0.0 {
        let excess = FunctionHandle::sum(&row, n).sub(&FunctionHandle::constant(problem.budget, n));
        let pen = excess.max(&FunctionHandle::constant(0.0, n)).scale(lambda);
        unpenalized = Some((objective.clone(), excess));
        objective = objective.add(&pen);
    }
    BranchNlp { objective, constraints, unpenalized }
}

/// Drives `x0` onto `constraints <= 0` by descent on the summed violation.
fn phase_one(set: &PolyhedralSet, constraints: &[FunctionHandle], x0: &[f64], stop: &StopRule) -> Result<Option<Vec<f64>>> {
    let n = set.dim();
    let viol = |x: &[f64]| constraints.iter().map(|c| c.eval(x).max(0.0)).sum::<f64>();
    if viol(x0) <= stop.feas_tol {
        return Ok(Some(x0.to_vec()));
    }
    let zero = FunctionHandle::constant(0.0, n);
    let parts: Vec<FunctionHandle> = constraints.iter().map(|c| c.max(&zero)).collect();
    let v = FunctionHandle::sum(&parts, n);
    let r = inner_solve(&v, set, &[], x0, stop)?;
    Ok((viol(&r.x) <= stop.feas_tol).then_some(r.x))
}

fn solve_branch_from(
    problem: &ProblemSpec,
    nlp: &BranchNlp,
    x0: &[f64],
    stop: &StopRule,
) -> Result<Option<InnerReport>> {
    let Some(start) = phase_one(&problem.feasible_set, &nlp.constraints, x0, stop)? else {
        return Ok(None);
    };
    let r = inner_solve(&nlp.objective, &problem.feasible_set, &nlp.constraints, &start, stop)?;
    polish_on_budget(problem, nlp, r, stop).map(Some)
}

/// Excess within this of zero counts as sitting on the penalty kink.
const KINK_BAND: f64 = 1e-6;

/// Descent along a penalty kink stalls at roundoff once the remaining
/// decrease drops below the resolution of the value. A result on the kink is
/// re-solved with the budget row as a hard constraint and kept when it
/// converges and is no worse.
fn polish_on_budget(problem: &ProblemSpec, nlp: &BranchNlp, r: InnerReport, stop: &StopRule) -> Result<InnerReport> {
    let Some((base, excess)) = &nlp.unpenalized else {
        return Ok(r);
    };
    if r.status == InnerStatus::Converged || excess.eval(&r.x).abs() > KINK_BAND {
        return Ok(r);
    }
    let mut cons = nlp.constraints.clone();
    cons.push(excess.clone());
    let Some(start) = phase_one(&problem.feasible_set, &cons, &r.x, stop)? else {
        return Ok(r);
    };
    let q = inner_solve(base, &problem.feasible_set, &cons, &start, stop)?;
    // Excess within the feasibility tolerance is not charged.
    let slack = 4.0 * f64::EPSILON * r.value.abs().max(1.0);
    let keep = q.status == InnerStatus::Converged && excess.eval(&q.x) <= stop.feas_tol && q.value <= r.value + slack;
    Ok(if keep { q } else { r })
}

#[derive(Clone, Debug, Serialize)]
pub struct LiftResult {
    pub lambda: f64,
    pub branches: Vec<BranchOutcome>,
    /// Branch index of the selected tuple.
    pub best: usize,
    /// All branch indices whose minimum ties with the best.
    pub ties: Vec<usize>,
    pub x: Vec<f64>,
    pub branch_value: f64,
    pub recovered: RecoveredAux,
    /// Original objective at `x`.
    pub objective: f64,
    pub functional: f64,
    pub feasible: bool,
    /// `Err` carries the reason no certificate could be computed, for
    /// instance an infeasible point.
    pub certificate: std::result::Result<Certificate, String>,
}

impl LiftResult {
    pub fn certified(&self) -> bool {
        self.certificate.as_ref().is_ok_and(|c| c.verdict.is_stationary())
    }
}

/// Solves every branch from several starts and returns the best tuple after
/// recovering the auxiliary variables.
pub fn solve_lifted(problem: &ProblemSpec, lambda: f64, options: &LiftOptions) -> Result<LiftResult> {
    let lifted = LiftedProblem::new(problem.clone(), lambda)?;
    let terms = problem.n_objective() + problem.n_constraint();
    let count = 1usize.checked_shl(terms as u32).filter(|&c| terms < usize::BITS as usize && c <= options.branch_budget);
    let Some(count) = count else {
        return Err(Error::BudgetExceeded(format!(
            "2^{terms} branches exceed the budget {}",
            options.branch_budget
        )));
    };
    let starts = start_points(&problem.feasible_set, options.starts.max(1), options.seed);
    let ns = starts.len();
    if ns == 0 {
        return Err(Error::Infeasible("no start point in the feasible set".into()));
    }
    let nlps: Vec<(BranchAssignment, BranchNlp)> = (0..count)
        .map(|i| {
            let a = BranchAssignment::from_index(i, terms);
            let nlp = branch_nlp(problem, lambda, &a);
            (a, nlp)
        })
        .collect();
    let runs = options.exec.map_range(count * ns, |j| {
        let (b, s) = (j / ns, j % ns);
        solve_branch_from(problem, &nlps[b].1, &starts[s], &options.stop)
    });
    let k = problem.n_objective();
    let mut branches = Vec::with_capacity(count);
    for (b, (a, _)) in nlps.into_iter().enumerate() {
        let mut best: Option<(usize, InnerReport)> = None;
        let mut error = None;
        for (s, run) in runs[b * ns..(b + 1) * ns].iter().enumerate() {
            match run {
                Ok(Some(r)) => {
                    if best.as_ref().map_or(true, |(_, q)| r.value < q.value) {
                        best = Some((s, r.clone()));
                    }
                }
                Ok(None) => {}
                Err(e) => error = error.or(Some(e.to_string())),
            }
        }
        let status = match (&best, error) {
            (Some(_), _) => BranchStatus::Solved,
            (None, Some(e)) => BranchStatus::Failed(e),
            (None, None) => BranchStatus::Infeasible,
        };
        let (t, s) = match &best {
            Some((_, r)) => {
                let aux = |i: usize, term: &HeavisideTerm| match a.0[i] {
                    Branch::Up => term.multiplier.eval(&r.x),
                    Branch::Down => 0.0,
                };
                (
                    problem.objective_terms.iter().enumerate().map(|(i, t)| aux(i, t)).collect(),
                    problem.constraint_terms.iter().enumerate().map(|(i, t)| aux(k + i, t)).collect(),
                )
            }
            None => (vec![], vec![]),
        };
        branches.push(BranchOutcome {
            index: b,
            assignment: a,
            status,
            start: best.as_ref().map(|(s, _)| *s),
            report: best.map(|(_, r)| r),
            t,
            s,
        });
    }
    let best_value = branches
        .iter()
        .filter_map(|b| b.value())
        .fold(f64::INFINITY, f64::min);
    if !best_value.is_finite() {
        return Err(Error::Infeasible("every branch is infeasible or failed".into()));
    }
    let tie = options.tie_tol * best_value.abs().max(1.0);
    let ties: Vec<usize> = branches
        .iter()
        .filter(|b| b.value().is_some_and(|v| v <= best_value + tie))
        .map(|b| b.index)
        .collect();
    let feas_tol = options.stop.feas_tol.max(1e-9);
    // Among ties, prefer the smallest recovered lifted value, then the lowest index.
    let mut chosen: Option<(usize, RecoveredAux)> = None;
    for &i in &ties {
        let b = &branches[i];
        let x = &b.report.as_ref().expect("solved").x;
        let rec = recover_auxiliary(&lifted, x, &b.t, &b.s, feas_tol)?;
        if chosen.as_ref().map_or(true, |(_, c)| rec.lifted_after < c.lifted_after) {
            chosen = Some((i, rec));
        }
    }
    let (best, recovered) = chosen.expect("ties is nonempty");
    let x = branches[best].report.as_ref().expect("solved").x.clone();
    let certificate = check_pseudo_b_stationary(problem, &x, &options.tolerances).map_err(|e| e.to_string());
    let functional = problem.functional(&x);
    Ok(LiftResult {
        lambda,
        best,
        ties,
        branch_value: best_value,
        objective: problem.phi(&x),
        functional,
        feasible: !problem.has_functional_constraint() || functional <= problem.budget + feas_tol,
        certificate,
        recovered,
        x,
        branches,
    })
}

// ---------------------------------------------------------------------------
// Tangent cones of the epigraph of a product

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TangentCase {
    /// `t = pi`, `g > 0`: `dt >= phi'(v)`.
    ActivePositive,
    /// `t = pi`, `g < 0`: `dt >= 0`.
    ActiveNegative,
    /// `t = pi = 0`, `g = 0 < phi`: `dt >= 0`, `g'(v) <= 0`.
    ActiveZeroPositiveMultiplier,
    /// `t = pi = 0`, `g = 0 = phi`: union of the two one-sided pieces.
    ActiveZeroZeroMultiplier,
    /// `t > pi`, and `g != 0` or `g = 0 = phi`: everything over `T(S)`.
    AboveOffBoundary,
    /// `t > phi > 0 = g`: everything over `T(S)`.
    AboveMultiplier,
    /// `0 < t < phi`, `g = 0`: `g'(v) <= 0`.
    BelowMultiplier,
    /// `0 < t = phi`, `g = 0`: union with free `dt` on the down piece.
    AtMultiplier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Relation {
    /// The formula describes the cone exactly.
    Equality,
    /// The cone is contained in the formula's set.
    Inclusion,
}

#[derive(Clone, Debug, Serialize)]
pub struct FormulaAgreement {
    pub formula: String,
    pub relation: Relation,
    /// Direct and formula membership coincide.
    pub agree: usize,
    /// Tangent by the direct test but outside the formula's set.
    pub direct_only: usize,
    /// In the formula's set but not tangent by the direct test.
    pub formula_only: usize,
}

impl FormulaAgreement {
    /// Equality needs no disagreement; inclusion tolerates `formula_only`.
    pub fn holds(&self) -> bool {
        match self.relation {
            Relation::Equality => self.direct_only == 0 && self.formula_only == 0,
            Relation::Inclusion => self.direct_only == 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TangentProbeReport {
    pub case: TangentCase,
    pub samples: usize,
    /// Samples whose direct test changed between the two probe step lengths.
    pub ambiguous: usize,
    pub tangent_count: usize,
    pub formulas: Vec<FormulaAgreement>,
    /// `phi'(v) >= 0` on `T(S)` where `g'(v) = 0`; only evaluated at `g = 0 = phi`.
    pub multiplier_sign_on_kernel: Option<bool>,
}

impl TangentProbeReport {
    pub fn holds(&self) -> bool {
        self.formulas.iter().all(|f| f.holds())
    }
}

/// Probe step lengths of the direct membership test.
const PROBE_STEPS: [f64; 2] = [1e-5, 1e-6];

/// Compares the case formulas for the tangent cone of the epigraph of
/// `phi 1(g > 0)` over `set` at `(t, x)` against a direct small-step test.
/// Both functions must be piecewise affine so that membership along a ray is
/// constant for small enough steps.
pub fn tangent_formula_probe(
    term: &HeavisideTerm,
    set: &PolyhedralSet,
    t: f64,
    x: &[f64],
    samples: usize,
    seed: u64,
) -> Result<TangentProbeReport> {
    let n = set.dim();
    check_dim(n, x.len())?;
    check_dim(n, term.dim())?;
    if !term.multiplier.is_piecewise_affine() || !term.inner.is_piecewise_affine() {
        return Err(Error::NotStructured("tangent probe needs piecewise affine data".into()));
    }
    if !set.contains(x, 0.0) || !epi_membership(t, x, term) {
        return Err(Error::Infeasible(format!("({t}, {x:?}) is not in the epigraph")));
    }
    let (phi, dphi) = term.multiplier.value_and_form(x)?;
    let (g, dg) = term.inner.value_and_form(x)?;
    let pi = product_value(term, x);
    let zero = |v: f64| v.abs() <= EPS_ACT;
    let case = if zero(t - pi) {
        if g > EPS_ACT {
            TangentCase::ActivePositive
        } else if g < -EPS_ACT {
            TangentCase::ActiveNegative
        } else if zero(phi) {
            TangentCase::ActiveZeroZeroMultiplier
        } else if phi > 0.0 {
            TangentCase::ActiveZeroPositiveMultiplier
        } else {
            return Err(Error::InvalidModel("multiplier is negative on the zero set".into()));
        }
    } else if !zero(g) || zero(phi) {
        TangentCase::AboveOffBoundary
    } else if phi < 0.0 {
        return Err(Error::InvalidModel("multiplier is negative on the zero set".into()));
    } else if zero(t - phi) {
        TangentCase::AtMultiplier
    } else if t > phi {
        TangentCase::AboveMultiplier
    } else {
        TangentCase::BelowMultiplier
    };
    let cone = set.tangent_cone(x, EPS_ACT);
    type Pred<'a> = Box<dyn Fn(f64, &[f64]) -> bool + 'a>;
    let dp = |v: &[f64]| dphi.eval(v);
    let dgv = |v: &[f64]| dg.eval(v);
    let mut formulas: Vec<(String, Relation, Pred)> = Vec::new();
    let mut kernel_sign = None;
    match case {
        TangentCase::ActivePositive => formulas.push(("dt >= phi'(v)".into(), Relation::Equality, Box::new(move |dt, v| dt >= dp(v)))),
        TangentCase::ActiveNegative => formulas.push(("dt >= 0".into(), Relation::Equality, Box::new(|dt, _| dt >= 0.0))),
        TangentCase::ActiveZeroPositiveMultiplier => {
            // Piecewise affine data makes {x in S : g <= 0} satisfy the ACQ.
            formulas.push(("dt >= 0, g'(v) <= 0".into(), Relation::Equality, Box::new(move |dt, v| dt >= 0.0 && dgv(v) <= 0.0)))
        }
        TangentCase::ActiveZeroZeroMultiplier => {
            formulas.push((
                "(dt >= phi'(v), g'(v) >= 0) or (dt >= 0, g'(v) <= 0)".into(),
                Relation::Inclusion,
                Box::new(move |dt, v| (dt >= dp(v) && dgv(v) >= 0.0) || (dt >= 0.0 && dgv(v) <= 0.0)),
            ));
            // min phi'(v) over T(S), unit box, g'(v) = 0.
            let region = Region::from_tangent(&cone, false);
            let cons = [
                LinearizedConstraint { offset: 0.0, form: dg.clone() },
                LinearizedConstraint { offset: 0.0, form: dg.neg() },
            ];
            let m = lp_min(&dphi, &cons, &region, 4096);
            let holds = m.exhaustive && m.value >= -1e-12;
            kernel_sign = Some(holds);
            if holds {
                formulas.push((
                    "dt >= phi'(v) 1(g'(v) > 0)".into(),
                    Relation::Equality,
                    Box::new(move |dt, v| dt >= if dgv(v) > 0.0 { dp(v) } else { 0.0 }),
                ));
            }
        }
        TangentCase::AboveOffBoundary | TangentCase::AboveMultiplier => {
            formulas.push(("any dt".into(), Relation::Equality, Box::new(|_, _| true)))
        }
        TangentCase::BelowMultiplier => {
            formulas.push(("g'(v) <= 0".into(), Relation::Inclusion, Box::new(move |_, v| dgv(v) <= 0.0)))
        }
        TangentCase::AtMultiplier => formulas.push((
            "(dt >= phi'(v), g'(v) >= 0) or g'(v) <= 0".into(),
            Relation::Inclusion,
            Box::new(move |dt, v| (dt >= dp(v) && dgv(v) >= 0.0) || dgv(v) <= 0.0),
        )),
    }
    let direct = |dt: f64, v: &[f64], tau: f64| {
        let y: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + tau * b).collect();
        set.contains(&y, 0.0) && epi_membership(t + tau * dt, &y, term)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tallies: Vec<FormulaAgreement> = formulas
        .iter()
        .map(|(name, rel, _)| FormulaAgreement { formula: name.clone(), relation: *rel, agree: 0, direct_only: 0, formula_only: 0 })
        .collect();
    let (mut ambiguous, mut tangent_count, mut decisive) = (0, 0, 0);
    while decisive < samples {
        let dt = rng.gen_range(-2.0..2.0);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d0 = direct(dt, &v, PROBE_STEPS[0]);
        if d0 != direct(dt, &v, PROBE_STEPS[1]) {
            ambiguous += 1;
            continue;
        }
        decisive += 1;
        tangent_count += d0 as usize;
        let in_s = cone.contains(&v, 0.0);
        for ((_, _, pred), tally) in formulas.iter().zip(&mut tallies) {
            match (d0, in_s && pred(dt, &v)) {
                (a, b) if a == b => tally.agree += 1,
                (true, false) => tally.direct_only += 1,
                _ => tally.formula_only += 1,
            }
        }
    }
    Ok(TangentProbeReport {
        case,
        samples,
        ambiguous,
        tangent_count,
        formulas: tallies,
        multiplier_sign_on_kernel: kernel_sign,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_l0;
    use proptest::prelude::*;

    fn h(s: &str, n: usize) -> FunctionHandle {
        FunctionHandle::parse(s, n).unwrap()
    }

    fn l0_problem() -> ProblemSpec {
        ProblemSpec::new(
            h("(x1 - 1)^2", 1),
            build_l0(&[0.5]).unwrap(),
            vec![],
            None,
            PolyhedralSet::boxed(vec![-2.0], vec![2.0]).unwrap(),
        )
        .unwrap()
    }

    fn budget_problem() -> ProblemSpec {
        ProblemSpec::new(
            h("(x1 - 2)^2", 1),
            vec![],
            vec![HeavisideTerm::open(h("x1", 1), h("x1", 1))],
            Some(1.0),
            PolyhedralSet::boxed(vec![-3.0], vec![3.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn epi_membership_examples() {
        let term = HeavisideTerm::open(h("x1^2", 1), h("x1", 1));
        assert!(epi_membership(1.0, &[1.0], &term));
        assert!(epi_membership(0.0, &[-1.0], &term));
        assert!(!epi_membership(-0.1, &[0.0], &term));
        assert!((epi_residual(-0.1, &[0.0], &term) - 0.1).abs() < 1e-15);
    }

    proptest! {
        // With phi >= 0 on the zero set, the min-max form is the epigraph.
        #[test]
        fn epi_membership_matches_definition(x in -2.0f64..2.0, t in -1.0f64..5.0, snap in 0u8..3) {
            let x = if snap == 0 { 0.0 } else { x };
            let term = HeavisideTerm::open(h("x1^2 + 0.5", 1), h("x1", 1));
            let direct = t >= product_value(&term, &[x]);
            prop_assert_eq!(epi_membership(t, &[x], &term), direct);
        }

        #[test]
        fn recovery_never_increases_lifted_objective(x in -3.0f64..3.0, dt in 0.0f64..2.0, ds in 0.0f64..2.0) {
            let lifted = LiftedProblem::new(budget_problem(), 4.0).unwrap();
            let term = &lifted.base.constraint_terms[0];
            let s = product_value(term, &[x]) + ds;
            let _ = dt;
            let r = recover_auxiliary(&lifted, &[x], &[], &[s], 1e-12).unwrap();
            prop_assert!(r.lifted_after <= r.lifted_before + 1e-12);
            prop_assert_eq!(r.s[0], product_value(term, &[x]));
        }
    }

    #[test]
    fn penalty_from_exact_constants() {
        let set = PolyhedralSet::boxed(vec![-1.0], vec![1.0]).unwrap();
        let terms: Vec<HeavisideTerm> = (0..3)
            .map(|i| HeavisideTerm::open(h("x1 + 2", 1).with_lipschitz_hint(1.0), h(&format!("x1 - {}", i as f64 * 0.1), 1)))
            .collect();
        let p = ProblemSpec::new(
            h("2 * x1", 1).with_lipschitz_hint(2.0),
            terms,
            vec![HeavisideTerm::open(h("1", 1), h("x1", 1))],
            Some(1.0),
            set.clone(),
        )
        .unwrap();
        let c = choose_penalty(&p, 1.0, 0).unwrap();
        assert_eq!(c.lambda, 1.0 * (2.0 + 3.0 * 1.0) + 1.0);
        let q = ProblemSpec::new(h("0", 1).with_lipschitz_hint(0.0), vec![], vec![HeavisideTerm::open(h("1", 1), h("x1", 1))], Some(1.0), set).unwrap();
        assert_eq!(choose_penalty(&q, 1.0, 0).unwrap().lambda, 1.0);
        assert!(choose_penalty(&l0_problem(), 1.5, 0).unwrap().skipped);
    }

    #[test]
    fn l0_branches_list_both_stationary_tuples() {
        let r = solve_lifted(&l0_problem(), 0.0, &LiftOptions::default()).unwrap();
        assert_eq!(r.branches.len(), 4);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.objective - 0.5).abs() < 1e-9, "{:?}", r.x);
        assert_eq!(r.recovered.t, vec![0.5, 0.0]);
        // Both pieces down pins x at 0 with value 1.
        let dd = r.branches.iter().find(|b| b.assignment.label() == "DD").unwrap();
        let ddx = dd.report.as_ref().unwrap().x[0];
        assert!(ddx.abs() < 1e-9 && (dd.value().unwrap() - 1.0).abs() < 1e-8, "{ddx:e} {:?}", dd.value());
        assert!(r.certified());
    }

    #[test]
    fn budget_instance_auto_and_weak_penalty() {
        let p = budget_problem();
        let lam = choose_penalty(&p, 1.5, 0).unwrap().lambda;
        assert!(lam > 10.0);
        let r = solve_lifted(&p, lam, &LiftOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6 && r.feasible, "{:?}", r.x);
        assert_eq!(r.recovered.case, AuxCase::Exact);
        assert!(r.certified());
        // Penalty 0.5 is below the cost slope at x = 1: the up branch settles at 1.75.
        let w = solve_lifted(&p, 0.5, &LiftOptions::default()).unwrap();
        assert!((w.x[0] - 1.75).abs() < 1e-6, "{:?}", w.x);
        assert!(!w.feasible);
        assert_eq!(w.recovered.case, AuxCase::Infeasible);
        assert!(w.certificate.is_err());
    }

    #[test]
    fn plain_nlp_has_one_branch_and_infeasible_branches_are_skipped() {
        let p = ProblemSpec::new(h("(x1 - 0.5)^2", 1), vec![], vec![], None, PolyhedralSet::boxed(vec![-1.0], vec![1.0]).unwrap()).unwrap();
        let r = solve_lifted(&p, 0.0, &LiftOptions::default()).unwrap();
        assert_eq!(r.branches.len(), 1);
        assert!((r.x[0] - 0.5).abs() < 1e-6);
        // g = x1 - 5 >= 0 is impossible on [-1, 1].
        let q = ProblemSpec::new(
            h("x1", 1),
            vec![HeavisideTerm::open(h("1", 1), h("x1 - 5", 1))],
            vec![],
            None,
            PolyhedralSet::boxed(vec![-1.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        let r = solve_lifted(&q, 0.0, &LiftOptions::default()).unwrap();
        let up = &r.branches[1];
        assert!(matches!(up.status, BranchStatus::Infeasible), "{:?}", up.status);
        assert!((r.x[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn branch_budget_is_enforced() {
        let opts = LiftOptions { branch_budget: 2, ..Default::default() };
        assert!(matches!(solve_lifted(&l0_problem(), 0.0, &opts), Err(Error::BudgetExceeded(_))));
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let p = budget_problem();
        let a = solve_lifted(&p, 5.0, &LiftOptions { exec: Exec::Sequential, ..Default::default() }).unwrap();
        let b = solve_lifted(&p, 5.0, &LiftOptions::default()).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.ties, b.ties);
    }

    #[test]
    fn recovery_rejects_points_below_the_epigraph() {
        let lifted = LiftedProblem::new(l0_problem(), 0.0).unwrap();
        assert!(recover_auxiliary(&lifted, &[1.0], &[0.2, 0.0], &[], 1e-12).is_err());
        let r = recover_auxiliary(&lifted, &[-1.0], &[0.0, 3.0], &[], 1e-12).unwrap();
        assert_eq!(r.t, vec![0.0, 0.5]);
        assert_eq!(r.case, AuxCase::Unconstrained);
    }

    fn probe(phi: &str, g: &str, t: f64, x: f64) -> TangentProbeReport {
        let term = HeavisideTerm::open(h(phi, 1), h(g, 1));
        let set = PolyhedralSet::boxed(vec![-1.0], vec![1.0]).unwrap();
        tangent_formula_probe(&term, &set, t, &[x], 500, 7).unwrap()
    }

    #[test]
    fn tangent_probe_cases() {
        let r = probe("x1 + 1", "x1", 1.5, 0.5);
        assert_eq!(r.case, TangentCase::ActivePositive);
        assert!(r.holds(), "{r:?}");
        let r = probe("x1 + 1", "x1", 0.0, -0.5);
        assert_eq!(r.case, TangentCase::ActiveNegative);
        assert!(r.holds(), "{r:?}");
        let r = probe("x1 + 1", "x1", 0.0, 0.0);
        assert_eq!(r.case, TangentCase::ActiveZeroPositiveMultiplier);
        assert!(r.holds(), "{r:?}");
        let r = probe("max(x1, 0)", "x1", 0.0, 0.0);
        assert_eq!(r.case, TangentCase::ActiveZeroZeroMultiplier);
        assert_eq!(r.multiplier_sign_on_kernel, Some(true));
        assert!(r.holds() && r.formulas.len() == 2, "{r:?}");
        let r = probe("x1 + 1", "x1", 0.5, 0.0);
        assert_eq!(r.case, TangentCase::BelowMultiplier);
        assert!(r.holds(), "{r:?}");
        let r = probe("x1 + 1", "x1", 1.0, 0.0);
        assert_eq!(r.case, TangentCase::AtMultiplier);
        assert!(r.holds(), "{r:?}");
        let r = probe("x1 + 1", "x1", 2.0, 0.0);
        assert_eq!(r.case, TangentCase::AboveMultiplier);
        assert!(r.holds(), "{r:?}");
        let r = probe("x1 + 1", "x1", 2.0, 0.5);
        assert_eq!(r.case, TangentCase::AboveOffBoundary);
        assert!(r.holds(), "{r:?}");
    }

    #[test]
    fn tangent_probe_at_set_boundary() {
        // x at the upper end of S: only v <= 0 is tangent to S.
        let term = HeavisideTerm::open(h("x1 + 1", 1), h("x1 - 1", 1));
        let set = PolyhedralSet::boxed(vec![-1.0], vec![1.0]).unwrap();
        let r = tangent_formula_probe(&term, &set, 0.0, &[1.0], 500, 3).unwrap();
        assert_eq!(r.case, TangentCase::ActiveZeroPositiveMultiplier);
        assert!(r.holds(), "{r:?}");
    }
}
