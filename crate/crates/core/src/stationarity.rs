//! Pseudo B-stationarity: index partitions, the pulled-down local problem,
//! certificates via linearized-cone LPs, binary multiplier families, sign
//! conditions and the descent condition on the functional constraint.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functions::{FunctionHandle, PlForm};
use crate::direction::{lp_min, DirectionMin, LinearizedConstraint, Region};
use crate::lp::{LinearProgram, LpFailure, Sense};
use crate::model::{Boundary, PolyhedralSet, ProblemSpec, TangentCone, ThreePiece};
use crate::par::Exec;

/// Numerical tolerances shared by the certificate routines.
#[derive(Clone, Debug, Serialize)]
pub struct Tolerances {
    /// Inner values with `|g| <= eps_part` are in the zero class.
    pub eps_part: f64,
    /// Minimal directional derivative accepted as nonnegative.
    pub tol_stat: f64,
    /// Feasibility slack for the set and the functional constraint.
    pub feas_tol: f64,
    /// Maximum number of concave-piece selections enumerated by cone LPs.
    pub piece_budget: usize,
    /// Directions drawn when the selection budget is exceeded.
    pub sample_directions: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            eps_part: 1e-7,
            tol_stat: 1e-8,
            feas_tol: 1e-9,
            piece_budget: 4096,
            sample_directions: 2000,
            seed: 0,
            exec: Exec::Parallel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Class {
    Positive,
    Zero,
    Negative,
}

/// Which sum a term belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Origin {
    Objective(usize),
    Constraint(usize),
}

#[derive(Clone, Debug, Serialize)]
pub struct IndexPartition {
    pub objective: Vec<Class>,
    pub constraint: Vec<Class>,
    pub objective_values: Vec<f64>,
    pub constraint_values: Vec<f64>,
    /// Terms whose inner value lies in `(0, 2 eps_part]` in magnitude.
    pub sensitive: Vec<Origin>,
}

impl IndexPartition {
    pub fn objective_in(&self, c: Class) -> Vec<usize> {
        (0..self.objective.len()).filter(|&k| self.objective[k] == c).collect()
    }

    pub fn constraint_in(&self, c: Class) -> Vec<usize> {
        (0..self.constraint.len()).filter(|&l| self.constraint[l] == c).collect()
    }
}

fn classify(v: f64, eps: f64) -> Class {
    if v > eps {
        Class::Positive
    } else if v < -eps {
        Class::Negative
    } else {
        Class::Zero
    }
}

pub fn partition(problem: &ProblemSpec, x: &[f64], eps_part: f64) -> IndexPartition {
    let ov: Vec<f64> = problem.objective_terms.iter().map(|t| t.inner.eval(x)).collect();
    let cv: Vec<f64> = problem.constraint_terms.iter().map(|t| t.inner.eval(x)).collect();
    let sensitive = |v: f64| v != 0.0 && v.abs() <= 2.0 * eps_part;
    let mut s: Vec<Origin> = ov
        .iter()
        .enumerate()
        .filter(|(_, v)| sensitive(**v))
        .map(|(k, _)| Origin::Objective(k))
        .collect();
    s.extend(
        cv.iter()
            .enumerate()
            .filter(|(_, v)| sensitive(**v))
            .map(|(l, _)| Origin::Constraint(l)),
    );
    IndexPartition {
        objective: ov.iter().map(|&v| classify(v, eps_part)).collect(),
        constraint: cv.iter().map(|&v| classify(v, eps_part)).collect(),
        objective_values: ov,
        constraint_values: cv,
        sensitive: s,
    }
}

/// `function <= 0`, obtained from a term's inner function.
#[derive(Clone, Debug)]
pub struct SignedConstraint {
    pub function: FunctionHandle,
    pub origin: Origin,
    pub class: Class,
}

#[derive(Clone, Debug)]
pub struct FunctionalRow {
    pub function: FunctionHandle,
    pub budget: f64,
}

/// The local problem obtained by freezing every indicator at its value at the anchor.
#[derive(Clone, Debug)]
pub struct PulledDownProblem {
    pub anchor: Vec<f64>,
    pub objective: FunctionHandle,
    pub constraints: Vec<SignedConstraint>,
    /// Present whenever the problem has constraint terms.
    pub functional_row: Option<FunctionalRow>,
    pub set: PolyhedralSet,
    pub partition: IndexPartition,
}

fn signed(f: &FunctionHandle, class: Class, origin: Origin) -> SignedConstraint {
    SignedConstraint {
        function: if class == Class::Positive { f.neg() } else { f.clone() },
        origin,
        class,
    }
}

pub fn pulled_down(problem: &ProblemSpec, x: &[f64], eps_part: f64) -> PulledDownProblem {
    let p = partition(problem, x, eps_part);
    let n = problem.dim();
    let mut obj = vec![problem.base_cost.clone()];
    let mut constraints = Vec::new();
    for (k, t) in problem.objective_terms.iter().enumerate() {
        if p.objective[k] == Class::Positive {
            obj.push(t.multiplier.clone());
        }
        constraints.push(signed(&t.inner, p.objective[k], Origin::Objective(k)));
    }
    let mut row = Vec::new();
    for (l, t) in problem.constraint_terms.iter().enumerate() {
        if p.constraint[l] == Class::Positive {
            row.push(t.multiplier.clone());
        }
        constraints.push(signed(&t.inner, p.constraint[l], Origin::Constraint(l)));
    }
    PulledDownProblem {
        anchor: x.to_vec(),
        objective: FunctionHandle::sum(&obj, n),
        constraints,
        functional_row: problem.has_functional_constraint().then(|| FunctionalRow {
            function: FunctionHandle::sum(&row, n),
            budget: problem.budget,
        }),
        set: problem.feasible_set.clone(),
        partition: p,
    }
}

/// Minimize `objective` subject to `constraints <= 0` over `set`, locally.
#[derive(Clone, Debug)]
pub struct LocalNlp {
    pub objective: FunctionHandle,
    pub constraints: Vec<FunctionHandle>,
    pub set: PolyhedralSet,
}

impl PulledDownProblem {
    pub fn as_local_nlp(&self) -> LocalNlp {
        let mut constraints: Vec<FunctionHandle> =
            self.constraints.iter().map(|c| c.function.clone()).collect();
        if let Some(r) = &self.functional_row {
            constraints.push(r.function.sub(&FunctionHandle::constant(r.budget, self.set.dim())));
        }
        LocalNlp {
            objective: self.objective.clone(),
            constraints,
            set: self.set.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Cone LPs

fn linearized(cons: &[PlForm]) -> Vec<LinearizedConstraint> {
    cons.iter()
        .map(|f| LinearizedConstraint { offset: 0.0, form: f.clone() })
        .collect()
}

/// Minimizes `obj(v)` over the unit box (or l1 ball) in the tangent cone
/// with `cons_i(v) <= 0`. Returns `None` beyond `budget` selections.
pub(crate) fn cone_min(obj: &PlForm, cons: &[PlForm], tangent: &TangentCone, l1: bool, budget: usize) -> Option<DirectionMin> {
    let m = lp_min(obj, &linearized(cons), &Region::from_tangent(tangent, l1), budget);
    m.exhaustive.then_some(m)
}

/// A boxed tangent direction with `cons_i(v) + s <= 0` for some `s > 0`.
/// Returns `None` beyond `budget` selections.
fn slater_direction(cons: &[PlForm], tangent: &TangentCone, budget: usize) -> Option<Option<Vec<f64>>> {
    // Minimizing max_i cons_i(v) is the same LP with the roles swapped:
    // a negative optimum gives a strictly decreasing direction.
    let n = tangent.at_lower.len();
    if cons.is_empty() {
        return Some(Some(vec![0.0; n]));
    }
    let mut stacked = cons[0].clone();
    for c in &cons[1..] {
        stacked = stacked.max(c);
    }
    let m = lp_min(&stacked, &[], &Region::from_tangent(tangent, false), budget);
    if !m.exhaustive {
        return None;
    }
    Some((m.value < -1e-9).then_some(m.direction))
}

fn sample_cone_min(
    obj: &PlForm,
    cons: &[PlForm],
    tangent: &TangentCone,
    samples: usize,
    seed: u64,
) -> (f64, Vec<f64>) {
    let n = obj.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = (0.0, vec![0.0; n]);
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; n];
            e[i] = s;
            candidates.push(e);
        }
    }
    for _ in 0..samples {
        candidates.push((0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect());
    }
    for v in candidates {
        if tangent.contains(&v, 1e-12) && cons.iter().all(|c| c.eval(&v) <= 1e-12) {
            let val = obj.eval(&v);
            if val < best.0 {
                best = (val, v);
            }
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Certificates

/// Why a linearized cone may be trusted to equal the tangent cone.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum AcqEvidence {
    /// No nonlinear active constraints, or all of them piecewise affine.
    PiecewisePolyhedral,
    /// A tangent direction that strictly decreases every active constraint.
    DirectionalSlater { direction: Vec<f64> },
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Verdict {
    PseudoBStationary,
    Fails { witness: Vec<f64>, value: f64 },
    Inconclusive(String),
}

impl Verdict {
    pub fn is_stationary(&self) -> bool {
        matches!(self, Verdict::PseudoBStationary)
    }

    pub fn is_failure(&self) -> bool {
        matches!(self, Verdict::Fails { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum CertMethod {
    ConeLp { selections: usize },
    DirectionSampling { samples: usize },
}

#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub verdict: Verdict,
    /// Minimum of the directional derivative over the boxed linearized cone.
    pub min_dd: f64,
    pub witness: Option<Vec<f64>>,
    pub acq: AcqEvidence,
    pub method: CertMethod,
    /// Convex local problem: stationarity implies a local minimum.
    pub convex_like: bool,
    /// Indices of active constraints of the local problem.
    pub active: Vec<usize>,
    pub partition: Option<IndexPartition>,
    pub notes: Vec<String>,
}

/// B-stationarity of `x` for a local problem, checked on the linearized cone.
///
/// The tangent cone is contained in the linearized cone, so a nonnegative
/// minimum certifies stationarity regardless of constraint qualifications.
/// A negative minimum is reported as a failure only with ACQ evidence.
pub fn check_local_nlp(nlp: &LocalNlp, x: &[f64], tol: &Tolerances) -> Result<Certificate> {
    if !nlp.set.contains(x, tol.feas_tol.max(tol.eps_part)) {
        return Err(Error::Infeasible(format!("{x:?} is outside the polyhedral set")));
    }
    let mut active = Vec::new();
    for (i, c) in nlp.constraints.iter().enumerate() {
        let v = c.eval(x);
        if v > tol.eps_part {
            return Err(Error::Infeasible(format!("local constraint {i} has value {v} at {x:?}")));
        }
        if v >= -tol.eps_part {
            active.push(i);
        }
    }
    let obj = nlp.objective.dd_form(x)?;
    let cons: Vec<PlForm> = active
        .iter()
        .map(|&i| nlp.constraints[i].dd_form(x))
        .collect::<Result<_>>()?;
    let tangent = nlp.set.tangent_cone(x, tol.eps_part);
    let pa = active.iter().all(|&i| nlp.constraints[i].is_piecewise_affine());
    let (min_dd, witness, method, acq) = match cone_min(&obj, &cons, &tangent, false, tol.piece_budget) {
        Some(m) => {
            let acq = if pa {
                AcqEvidence::PiecewisePolyhedral
            } else {
                match slater_direction(&cons, &tangent, tol.piece_budget) {
                    Some(Some(d)) => AcqEvidence::DirectionalSlater { direction: d },
                    _ => AcqEvidence::None,
                }
            };
            (m.value, m.direction, CertMethod::ConeLp { selections: m.selections }, acq)
        }
        None => {
            let (v, d) = sample_cone_min(&obj, &cons, &tangent, tol.sample_directions, tol.seed);
            let acq = if pa { AcqEvidence::PiecewisePolyhedral } else { AcqEvidence::None };
            (v, d, CertMethod::DirectionSampling { samples: tol.sample_directions }, acq)
        }
    };
    let mut notes = Vec::new();
    let verdict = if min_dd >= -tol.tol_stat {
        match method {
            CertMethod::ConeLp { .. } => {
                if acq == AcqEvidence::None {
                    notes.push("certified on the linearized cone; ACQ not established".into());
                }
                Verdict::PseudoBStationary
            }
            CertMethod::DirectionSampling { .. } => {
                Verdict::Inconclusive("no descent direction found by sampling".into())
            }
        }
    } else if acq != AcqEvidence::None {
        Verdict::Fails {
            witness: witness.clone(),
            value: min_dd,
        }
    } else {
        Verdict::Inconclusive(format!(
            "linearized-cone descent {min_dd} but ACQ not established"
        ))
    };
    let convex_like = verdict.is_stationary()
        && nlp.objective.is_convex()
        && active.iter().all(|&i| nlp.constraints[i].is_convex());
    Ok(Certificate {
        verdict,
        min_dd,
        witness: (min_dd < -tol.tol_stat).then_some(witness),
        acq,
        method,
        convex_like,
        active,
        partition: None,
        notes,
    })
}

/// Checks pseudo B-stationarity of a feasible `x` for the full problem.
pub fn check_pseudo_b_stationary(problem: &ProblemSpec, x: &[f64], tol: &Tolerances) -> Result<Certificate> {
    if !problem.feasible_set.contains(x, tol.feas_tol) {
        return Err(Error::Infeasible(format!("{x:?} is outside the polyhedral set")));
    }
    let fv = problem.functional(x);
    if fv > problem.budget + tol.feas_tol {
        return Err(Error::Infeasible(format!(
            "functional constraint value {fv} exceeds budget {}",
            problem.budget
        )));
    }
    let pd = pulled_down(problem, x, tol.eps_part);
    let mut cert = check_local_nlp(&pd.as_local_nlp(), x, tol)?;
    if !pd.partition.sensitive.is_empty() {
        cert.notes.push(format!(
            "tolerance-sensitive index memberships: {:?}",
            pd.partition.sensitive
        ));
    }
    cert.partition = Some(pd.partition);
    Ok(cert)
}

// ---------------------------------------------------------------------------
// Binary multiplier families

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MultiplierMode {
    /// Passes if some multiplier choice passes.
    Necessary,
    /// Passes if every choice passes; requires `phi_k [g_k]_+ >= 0` near `x`.
    SufficientB,
    /// As [`MultiplierMode::SufficientB`] but multipliers also weight the
    /// zero-class terms; requires nonnegative zero-class multipliers at `x`.
    SufficientC,
}

#[derive(Clone, Debug, Serialize)]
pub struct MultiplierOutcome {
    /// One entry per zero-class objective term.
    pub xi: Vec<bool>,
    /// One entry per zero-class constraint term.
    pub mu: Vec<bool>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct MultiplierReport {
    pub mode: MultiplierMode,
    pub zero_objective: Vec<usize>,
    pub zero_constraint: Vec<usize>,
    pub outcomes: Vec<MultiplierOutcome>,
    pub precondition_holds: bool,
    pub passed: bool,
    pub notes: Vec<String>,
}

/// Largest `|K_=| + |L_=|` accepted by [`enumerate_multiplier_family`].
pub const MULTIPLIER_BUDGET: usize = 12;

/// Local check of `x` for every binary choice of multipliers on the zero classes.
pub fn enumerate_multiplier_family(
    problem: &ProblemSpec,
    x: &[f64],
    mode: MultiplierMode,
    tol: &Tolerances,
) -> Result<MultiplierReport> {
    if !problem.is_feasible(x, tol.feas_tol) {
        return Err(Error::Infeasible(format!("{x:?} is not feasible")));
    }
    let pd = pulled_down(problem, x, tol.eps_part);
    let kz = pd.partition.objective_in(Class::Zero);
    let lz = pd.partition.constraint_in(Class::Zero);
    let m = kz.len() + lz.len();
    if m > MULTIPLIER_BUDGET {
        return Err(Error::BudgetExceeded(format!(
            "{m} zero-class terms exceed the multiplier budget {MULTIPLIER_BUDGET}"
        )));
    }
    let n = problem.dim();
    let mut notes = Vec::new();
    let precondition_holds = match mode {
        MultiplierMode::Necessary => true,
        MultiplierMode::SufficientB => {
            let ok = products_nonnegative_near(problem, x, tol);
            if !ok {
                notes.push("phi [g]_+ takes negative values near the point".into());
            }
            ok
        }
        MultiplierMode::SufficientC => {
            let ok = kz.iter().all(|&k| problem.objective_terms[k].multiplier.eval(x) >= 0.0)
                && lz.iter().all(|&l| problem.constraint_terms[l].multiplier.eval(x) >= 0.0);
            if !ok {
                notes.push("a zero-class multiplier is negative at the point".into());
            }
            ok
        }
    };
    let outcomes: Vec<Result<MultiplierOutcome>> = tol.exec.map_range(1usize << m, |mask| {
        let bit = |i: usize| mask >> i & 1 == 1;
        let xi: Vec<bool> = (0..kz.len()).map(bit).collect();
        let mu: Vec<bool> = (0..lz.len()).map(|j| bit(kz.len() + j)).collect();
        let mut objective = pd.objective.clone();
        let mut constraints = Vec::new();
        for c in &pd.constraints {
            let dropped = match c.origin {
                Origin::Objective(k) => kz.iter().position(|&z| z == k).is_some_and(|i| xi[i]),
                Origin::Constraint(l) => lz.iter().position(|&z| z == l).is_some_and(|j| mu[j]),
            };
            if !dropped {
                constraints.push(c.function.clone());
            }
        }
        if let Some(r) = &pd.functional_row {
            let mut row = r.function.clone();
            if mode == MultiplierMode::SufficientC {
                for (j, &l) in lz.iter().enumerate() {
                    if mu[j] {
                        row = row.add(&problem.constraint_terms[l].multiplier);
                    }
                }
            }
            constraints.push(row.sub(&FunctionHandle::constant(r.budget, n)));
        }
        if mode == MultiplierMode::SufficientC {
            for (i, &k) in kz.iter().enumerate() {
                if xi[i] {
                    objective = objective.add(&problem.objective_terms[k].multiplier);
                }
            }
        }
        let nlp = LocalNlp {
            objective,
            constraints,
            set: problem.feasible_set.clone(),
        };
        let verdict = match check_local_nlp(&nlp, x, tol) {
            Ok(c) => c.verdict,
            Err(Error::Infeasible(msg)) => Verdict::Inconclusive(format!("point infeasible for this choice: {msg}")),
            Err(e) => return Err(e),
        };
        Ok(MultiplierOutcome { xi, mu, verdict })
    });
    let outcomes: Vec<MultiplierOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    let passed = match mode {
        MultiplierMode::Necessary => outcomes.iter().any(|o| o.verdict.is_stationary()),
        _ => precondition_holds && outcomes.iter().all(|o| o.verdict.is_stationary()),
    };
    Ok(MultiplierReport {
        mode,
        zero_objective: kz,
        zero_constraint: lz,
        outcomes,
        precondition_holds,
        passed,
        notes,
    })
}

/// Sampled check of `phi(y) max(g(y), 0) >= 0` on a small box around `x`.
fn products_nonnegative_near(problem: &ProblemSpec, x: &[f64], tol: &Tolerances) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(tol.seed ^ 0x5eed);
    let r = 1e-3;
    let terms = problem.objective_terms.iter().chain(&problem.constraint_terms);
    let pts: Vec<Vec<f64>> = std::iter::once(x.to_vec())
        .chain((0..500).map(|_| x.iter().map(|xi| xi + r * rng.gen_range(-1.0..=1.0)).collect()))
        .filter(|y: &Vec<f64>| problem.feasible_set.contains(y, 0.0))
        .collect();
    terms.into_iter().all(|t| {
        pts.iter()
            .all(|y| t.multiplier.eval(y) * t.inner.eval(y).max(0.0) >= -tol.feas_tol)
    })
}

// ---------------------------------------------------------------------------
// Sign conditions

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum SignMode {
    /// `phi >= 0` on the set where the inner function vanishes.
    ZeroSet,
    /// `phi >= 0` where the inner function is nonpositive.
    Sublevel,
    /// `phi >= 0` on the set intersected with a sup-norm ball.
    Near { center: Vec<f64>, radius: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct SignCheck {
    pub origin: Origin,
    /// Smallest multiplier value found; `+inf` for an empty region.
    pub min_value: f64,
    pub passed: bool,
    /// Solved exactly by LP rather than by sampling.
    pub exact: bool,
    pub witness: Option<Vec<f64>>,
}

fn affine_coeffs(f: &FunctionHandle) -> Option<(Vec<f64>, f64)> {
    if !f.is_affine() {
        return None;
    }
    let z = vec![0.0; f.dim()];
    let (c, form) = f.value_and_form(&z).ok()?;
    Some((form.convex_pieces()[0].clone(), c))
}

fn region_set(set: &PolyhedralSet, mode: &SignMode) -> Result<PolyhedralSet> {
    match mode {
        SignMode::Near { center, radius } => {
            let lo: Vec<f64> = set.lower().iter().zip(center).map(|(l, c)| l.max(c - radius)).collect();
            let hi: Vec<f64> = set.upper().iter().zip(center).map(|(u, c)| u.min(c + radius)).collect();
            PolyhedralSet::new(set.dim(), set.rows().to_vec(), lo, hi)
        }
        _ => Ok(set.clone()),
    }
}

/// Evenly spaced tensor grid over a box, at most `max_points` points.
pub(crate) fn box_grid(lo: &[f64], hi: &[f64], res: usize) -> Vec<Vec<f64>> {
    let n = lo.len();
    let ticks: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            if res < 2 || lo[i] == hi[i] {
                vec![0.5 * (lo[i] + hi[i])]
            } else {
                (0..res)
                    .map(|k| lo[i] + (hi[i] - lo[i]) * k as f64 / (res - 1) as f64)
                    .collect()
            }
        })
        .collect();
    tensor(&ticks)
}

pub(crate) fn tensor(ticks: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pts = vec![Vec::new()];
    for t in ticks {
        let mut next = Vec::with_capacity(pts.len() * t.len());
        for p in &pts {
            for &v in t {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        pts = next;
    }
    pts
}

/// Bisects `g` on the segment `[a, b]` (with `g(a) > 0 >= g(b)` or the reverse)
/// and returns the endpoint of the final bracket on the nonpositive side.
pub(crate) fn bisect_zero(g: &dyn Fn(&[f64]) -> f64, a: &[f64], b: &[f64], width: f64) -> Vec<f64> {
    let (mut pos, mut neg) = if g(a) > 0.0 { (a.to_vec(), b.to_vec()) } else { (b.to_vec(), a.to_vec()) };
    for _ in 0..200 {
        let d: f64 = pos.iter().zip(&neg).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        if d <= width {
            break;
        }
        let mid: Vec<f64> = pos.iter().zip(&neg).map(|(p, q)| 0.5 * (p + q)).collect();
        if g(&mid) > 0.0 {
            pos = mid;
        } else {
            neg = mid;
        }
    }
    neg
}

/// Grid points and axis-wise zero crossings of `g` inside `set`.
pub(crate) fn crossing_points(set: &PolyhedralSet, g: &dyn Fn(&[f64]) -> f64, res: usize) -> Vec<Vec<f64>> {
    let Some((lo, hi)) = set.bounding_box() else { return vec![] };
    let n = lo.len();
    let pts = box_grid(&lo, &hi, res);
    let mut out = Vec::new();
    for p in &pts {
        for i in 0..n {
            if hi[i] == lo[i] {
                continue;
            }
            let step = (hi[i] - lo[i]) / (res.max(2) - 1) as f64;
            let mut q = p.clone();
            q[i] += step;
            if q[i] > hi[i] + 1e-12 {
                continue;
            }
            let (gp, gq) = (g(p), g(&q));
            if (gp > 0.0) != (gq > 0.0) {
                let z = bisect_zero(g, p, &q, 1e-12);
                if set.contains(&z, 1e-12) {
                    out.push(z);
                }
            }
        }
    }
    out
}

/// Checks the sign of each term's multiplier on the region selected by `mode`.
pub fn check_sign_conditions(problem: &ProblemSpec, mode: &SignMode, resolution: usize) -> Result<Vec<SignCheck>> {
    let set = region_set(&problem.feasible_set, mode)?;
    let terms = problem
        .objective_terms
        .iter()
        .enumerate()
        .map(|(k, t)| (Origin::Objective(k), t))
        .chain(
            problem
                .constraint_terms
                .iter()
                .enumerate()
                .map(|(l, t)| (Origin::Constraint(l), t)),
        );
    let mut out = Vec::new();
    for (origin, t) in terms {
        let phi = &t.multiplier;
        let g = &t.inner;
        let restrict = match mode {
            SignMode::ZeroSet => Some(Sense::Eq),
            SignMode::Sublevel => Some(Sense::Le),
            SignMode::Near { .. } => None,
        };
        // Exact route: affine multiplier and affine inner function.
        if let (Some((a_phi, c_phi)), Some((a_g, c_g))) = (affine_coeffs(phi), affine_coeffs(g)) {
            let mut lp = LinearProgram::new(set.dim());
            set.add_to_lp(&mut lp);
            for (i, &a) in a_phi.iter().enumerate() {
                lp.set_cost(i, a);
            }
            if let Some(s) = restrict {
                lp.add_row(a_g.clone(), s, -c_g);
            }
            let (min_value, witness) = match lp.solve() {
                Ok(sol) => (sol.objective + c_phi, Some(sol.x)),
                Err(LpFailure::Infeasible) => (f64::INFINITY, None),
                Err(LpFailure::Unbounded) => (f64::NEG_INFINITY, None),
            };
            out.push(SignCheck {
                origin,
                min_value,
                passed: min_value >= -1e-12,
                exact: true,
                witness,
            });
            continue;
        }
        if let Some(c) = phi.constant_value() {
            if c >= 0.0 {
                out.push(SignCheck {
                    origin,
                    min_value: c,
                    passed: true,
                    exact: true,
                    witness: None,
                });
                continue;
            }
        }
        let gf = |y: &[f64]| g.eval(y);
        let mut pts: Vec<Vec<f64>> = Vec::new();
        let grid = set
            .bounding_box()
            .map(|(lo, hi)| box_grid(&lo, &hi, resolution))
            .unwrap_or_default();
        match mode {
            SignMode::ZeroSet => {
                pts.extend(grid.into_iter().filter(|p| set.contains(p, 0.0) && g.eval(p) == 0.0));
                pts.extend(crossing_points(&set, &gf, resolution));
            }
            SignMode::Sublevel => {
                pts.extend(grid.into_iter().filter(|p| set.contains(p, 0.0) && g.eval(p) <= 0.0));
                pts.extend(crossing_points(&set, &gf, resolution));
            }
            SignMode::Near { .. } => pts.extend(grid.into_iter().filter(|p| set.contains(p, 0.0))),
        }
        let mut min_value = f64::INFINITY;
        let mut witness = None;
        for p in pts {
            let v = phi.eval(&p);
            if v < min_value {
                min_value = v;
                witness = Some(p);
            }
        }
        out.push(SignCheck {
            origin,
            min_value,
            passed: min_value >= -1e-12,
            exact: false,
            witness,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Descent condition on the functional constraint

#[derive(Clone, Debug, Serialize)]
pub struct DescentSample {
    pub x: Vec<f64>,
    pub functional: f64,
    /// Best directional derivative found over unit-length cone directions.
    pub value: f64,
    pub direction: Vec<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DescentReport {
    /// Samples at which the functional constraint is violated.
    pub samples: Vec<DescentSample>,
    pub passed: bool,
    pub strengthened: bool,
    pub notes: Vec<String>,
}

/// Checks, at each infeasible sample, for a unit-length direction in the
/// linearized cone of the pseudo-feasible set along which the active part of
/// the functional constraint decreases at rate at least one. The
/// strengthened variant also charges `max(phi_l', 0)` for zero-class terms.
pub fn check_c4_sufficient(
    problem: &ProblemSpec,
    xs: &[Vec<f64>],
    strengthened: bool,
    tol: &Tolerances,
) -> Result<DescentReport> {
    let mut notes = Vec::new();
    if !problem.has_functional_constraint() {
        notes.push("no functional constraint".into());
        return Ok(DescentReport { samples: vec![], passed: true, strengthened, notes });
    }
    let results: Vec<Result<Option<DescentSample>>> = tol.exec.map(xs, |x| {
        let fv = problem.functional(x);
        if fv <= problem.budget + tol.feas_tol || !problem.feasible_set.contains(x, tol.feas_tol) {
            return Ok(None);
        }
        descent_at(problem, x, strengthened, tol).map(Some)
    });
    let samples: Vec<DescentSample> = results
        .into_iter()
        .filter_map(|r| r.transpose())
        .collect::<Result<_>>()?;
    if samples.is_empty() {
        notes.push("no infeasible sample; condition holds vacuously on the sample".into());
    }
    let passed = samples.iter().all(|s| s.passed);
    Ok(DescentReport { samples, passed, strengthened, notes })
}

/// Best unit-length direction in the linearized cone of the pseudo-feasible
/// set (without the functional row) for the active part of the functional
/// constraint at `x`, feasible or not.
pub fn descent_at(problem: &ProblemSpec, x: &[f64], strengthened: bool, tol: &Tolerances) -> Result<DescentSample> {
    let n = problem.dim();
    let p = partition(problem, x, tol.eps_part);
    let mut form = PlForm::zero(n);
    for (l, t) in problem.constraint_terms.iter().enumerate() {
        match p.constraint[l] {
            Class::Positive => form = form.add(&t.multiplier.dd_form(x)?),
            Class::Zero if strengthened => form = form.add(&t.multiplier.dd_form(x)?.max_with_zero()),
            _ => {}
        }
    }
    let mut cons = Vec::new();
    for (k, t) in problem.objective_terms.iter().enumerate() {
        if p.objective[k] == Class::Zero {
            cons.push(t.inner.dd_form(x)?);
        }
    }
    for (l, t) in problem.constraint_terms.iter().enumerate() {
        if p.constraint[l] == Class::Zero {
            cons.push(t.inner.dd_form(x)?);
        }
    }
    let tangent = problem.feasible_set.tangent_cone(x, tol.eps_part);
    let mut cands: Vec<Vec<f64>> = Vec::new();
    for l1 in [false, true] {
        if let Some(m) = cone_min(&form, &cons, &tangent, l1, tol.piece_budget) {
            cands.push(m.direction);
        }
    }
    for p in form.convex_pieces() {
        cands.push(p.iter().map(|c| -c).collect());
    }
    let mut best = (f64::INFINITY, vec![0.0; n]);
    for v in cands {
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            continue;
        }
        let u: Vec<f64> = v.iter().map(|c| c / norm).collect();
        if !tangent.contains(&u, 1e-12) || cons.iter().any(|c| c.eval(&u) > 1e-12) {
            continue;
        }
        let val = form.eval(&u);
        if val < best.0 {
            best = (val, u);
        }
    }
    let value = if best.0.is_finite() { best.0 } else { 0.0 };
    Ok(DescentSample {
        x: x.to_vec(),
        functional: problem.functional(x),
        value,
        direction: best.1,
        passed: value <= -1.0 + 1e-9,
    })
}

// ---------------------------------------------------------------------------
// Three-piece functions

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ThreePieceCase {
    /// `a < f < b`: minimize the middle piece.
    Interior,
    /// `f < a`: minimize the lower piece.
    Below,
    /// `f > b`: minimize the upper piece.
    Above,
    /// `f = a`: minimize the middle piece subject to `f >= a`.
    AtLower,
    /// `f = b`: minimize the upper piece subject to `f >= b`
    /// (the middle piece subject to `f <= b` for a closed middle).
    AtUpper,
}

#[derive(Clone, Debug, Serialize)]
pub struct ThreePieceCheck {
    pub case: ThreePieceCase,
    /// The case's region condition holds at the point.
    pub applies: bool,
    pub verdict: Option<Verdict>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ThreePieceReport {
    pub checks: Vec<ThreePieceCheck>,
    /// Cases that apply and whose problem is stationary at the point.
    pub matched: Vec<ThreePieceCase>,
}

/// Tests `x` against each of the five single-piece problems of a three-piece
/// objective.
pub fn three_piece_stationarity(
    tp: &ThreePiece,
    set: &PolyhedralSet,
    x: &[f64],
    tol: &Tolerances,
) -> Result<ThreePieceReport> {
    let n = set.dim();
    let fx = tp.f.eval(x);
    let [p1, p2, p3] = &tp.pieces;
    let a_minus_f = FunctionHandle::constant(tp.a, n).sub(&tp.f);
    let b_minus_f = FunctionHandle::constant(tp.b, n).sub(&tp.f);
    let e = tol.eps_part;
    let cases = [
        (ThreePieceCase::Interior, fx > tp.a + e && fx < tp.b - e, p1.clone(), vec![]),
        (ThreePieceCase::Below, fx < tp.a - e, p2.clone(), vec![]),
        (ThreePieceCase::Above, fx > tp.b + e, p3.clone(), vec![]),
        (ThreePieceCase::AtLower, (fx - tp.a).abs() <= e, p1.clone(), vec![a_minus_f]),
        match tp.boundary {
            Boundary::ClosedRight => (ThreePieceCase::AtUpper, (fx - tp.b).abs() <= e, p3.clone(), vec![b_minus_f]),
            Boundary::ClosedMiddle => (ThreePieceCase::AtUpper, (fx - tp.b).abs() <= e, p1.clone(), vec![b_minus_f.neg()]),
        },
    ];
    let mut checks = Vec::new();
    let mut matched = Vec::new();
    for (case, applies, objective, constraints) in cases {
        let verdict = if applies {
            let nlp = LocalNlp { objective, constraints, set: set.clone() };
            let v = check_local_nlp(&nlp, x, tol)?.verdict;
            if v.is_stationary() {
                matched.push(case);
            }
            Some(v)
        } else {
            None
        };
        checks.push(ThreePieceCheck { case, applies, verdict });
    }
    Ok(ThreePieceReport { checks, matched })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_l0, HeavisideTerm};

    fn h(src: &str, n: usize) -> FunctionHandle {
        FunctionHandle::parse(src, n).unwrap()
    }

    fn l0_problem(gamma: f64) -> ProblemSpec {
        ProblemSpec::new(
            h("(x1 - 1)^2", 1),
            build_l0(&[gamma]).unwrap(),
            vec![],
            None,
            PolyhedralSet::boxed(vec![-2.0], vec![2.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn partition_on_the_zero_set() {
        let p = ProblemSpec::new(
            h("0", 1),
            vec![HeavisideTerm::open(h("1", 1), h("x1", 1))],
            vec![],
            None,
            PolyhedralSet::boxed(vec![-1.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        let part = partition(&p, &[0.0], 1e-7);
        assert_eq!(part.objective, vec![Class::Zero]);
        let pd = pulled_down(&p, &[0.0], 1e-7);
        assert_eq!(pd.constraints.len(), 1);
        assert_eq!(pd.constraints[0].class, Class::Zero);
        assert!(pd.functional_row.is_none());
        let part = partition(&p, &[1.5e-7], 1e-7);
        assert_eq!(part.sensitive, vec![Origin::Objective(0)]);
    }

    #[test]
    fn l0_origin_is_stationary_and_multipliers_split() {
        let p = l0_problem(0.1);
        let tol = Tolerances::default();
        let c = check_pseudo_b_stationary(&p, &[0.0], &tol).unwrap();
        assert!(c.verdict.is_stationary());
        assert_eq!(c.acq, AcqEvidence::PiecewisePolyhedral);
        let nec = enumerate_multiplier_family(&p, &[0.0], MultiplierMode::Necessary, &tol).unwrap();
        assert!(nec.passed);
        assert_eq!(nec.outcomes.len(), 4);
        let suf = enumerate_multiplier_family(&p, &[0.0], MultiplierMode::SufficientC, &tol).unwrap();
        assert!(!suf.passed);
    }

    #[test]
    fn nonstationary_point_gives_witness() {
        let p = l0_problem(0.1);
        let c = check_pseudo_b_stationary(&p, &[0.5], &Tolerances::default()).unwrap();
        match c.verdict {
            Verdict::Fails { witness, value } => {
                assert_eq!(witness, vec![1.0]);
                assert!((value + 1.0).abs() < 1e-9);
            }
            v => panic!("{v:?}"),
        }
    }

    #[test]
    fn infeasible_point_rejected() {
        let p = l0_problem(0.1);
        assert!(matches!(
            check_pseudo_b_stationary(&p, &[3.0], &Tolerances::default()),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn sign_conditions_on_zero_set_and_sublevel() {
        let p = ProblemSpec::new(
            h("0", 1),
            vec![HeavisideTerm::open(h("x1", 1), h("x1", 1))],
            vec![],
            None,
            PolyhedralSet::boxed(vec![-1.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        let a = check_sign_conditions(&p, &SignMode::ZeroSet, 41).unwrap();
        assert!(a[0].passed && a[0].exact && a[0].min_value == 0.0);
        let b = check_sign_conditions(&p, &SignMode::Sublevel, 41).unwrap();
        assert!(!b[0].passed);
        assert_eq!(b[0].min_value, -1.0);
    }

    #[test]
    fn sampled_sign_condition_for_nonlinear_terms() {
        let p = ProblemSpec::new(
            h("0", 2),
            vec![HeavisideTerm::open(h("x2 - 0.25", 2), h("x1^2 + x2^2 - 0.25", 2))],
            vec![],
            None,
            PolyhedralSet::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let a = check_sign_conditions(&p, &SignMode::ZeroSet, 41).unwrap();
        assert!(!a[0].exact && !a[0].passed);
        // The true minimum on the circle is -0.75.
        assert!((a[0].min_value + 0.75).abs() < 1e-3);
    }

    #[test]
    fn nonpolyhedral_constraint_uses_slater_direction() {
        // Pulled-down constraint x1^2 + x2 <= 0 active at the origin.
        let nlp = LocalNlp {
            objective: h("x2", 2),
            constraints: vec![h("x1^2 + x2", 2)],
            set: PolyhedralSet::whole_space(2),
        };
        let c = check_local_nlp(&nlp, &[0.0, 0.0], &Tolerances::default()).unwrap();
        assert!(matches!(c.acq, AcqEvidence::DirectionalSlater { .. }));
        assert!(c.verdict.is_failure());
    }

    #[test]
    fn descent_condition_for_l0_budget_never_holds() {
        // Constant multipliers leave no decrease in the functional sum.
        let p = ProblemSpec::new(
            h("0", 2),
            vec![],
            build_l0(&[1.0, 1.0]).unwrap(),
            Some(1.0),
            PolyhedralSet::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let r = check_c4_sufficient(&p, &[vec![0.5, 0.5]], false, &Tolerances::default()).unwrap();
        assert_eq!(r.samples.len(), 1);
        assert!(!r.passed);
        assert_eq!(r.samples[0].value, 0.0);
    }

    #[test]
    fn descent_condition_with_decreasing_multiplier() {
        let p = ProblemSpec::new(
            h("0", 2),
            vec![],
            vec![HeavisideTerm::open(h("x1 + x2", 2), h("x1", 2))],
            Some(1.0),
            PolyhedralSet::boxed(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap(),
        )
        .unwrap();
        let r = check_c4_sufficient(&p, &[vec![1.0, 1.0], vec![0.2, 0.2]], false, &Tolerances::default()).unwrap();
        assert_eq!(r.samples.len(), 1);
        assert!(r.passed);
        assert!((r.samples[0].value + 2f64.sqrt()).abs() < 1e-9);
    }
}
