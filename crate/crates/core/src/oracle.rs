//! Brute-force ground truth for small instances: tensor-grid minimization of
//! the discontinuous problem, enumeration of the lifted complementarity and
//! on/off reformulations, and certified local minimizers.
//!
//! Grids are augmented with the zero crossings of every inner function, every
//! set row and the functional constraint along grid lines. Each crossing adds
//! the coordinates on both sides of a `1e-12` bracket and the bracket's secant
//! root to its axis, so the grid stays a tensor product. Intended for `n <= 3`.

use serde::Serialize;

use crate::continuation::{inner_solve, InnerStatus, StopRule};
use crate::error::{Error, Result};
use crate::functions::{lipschitz_of, FunctionHandle};
use crate::model::{PolyhedralSet, ProblemSpec};
use crate::par::Exec;
use crate::stationarity::{check_sign_conditions, SignMode};

/// Bracket width of the crossing bisection.
pub const SNAP_WIDTH: f64 = 1e-12;
/// Largest grid the oracle will evaluate.
pub const MAX_GRID_POINTS: usize = 4_000_000;

#[derive(Clone, Debug, Serialize)]
pub struct GridSpec {
    /// Points per coordinate at the coarsest level (at least 2).
    pub resolution: Vec<usize>,
    /// Each level doubles the number of intervals.
    pub refine: usize,
    pub snap: bool,
}

impl GridSpec {
    pub fn uniform(dim: usize, resolution: usize, refine: usize) -> Self {
        GridSpec { resolution: vec![resolution; dim], refine, snap: true }
    }

    fn at_level(&self, level: usize) -> Vec<usize> {
        self.resolution.iter().map(|&r| (r.max(2) - 1) * (1 << level) + 1).collect()
    }
}

/// A tensor grid clipped to the feasible set.
#[derive(Clone, Debug)]
pub struct Grid {
    pub axes: Vec<Vec<f64>>,
    /// Largest spacing of the uniform part.
    pub spacing: f64,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multi-index to point, last coordinate fastest.
    pub fn point(&self, mut flat: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.axes.len()];
        for i in (0..self.axes.len()).rev() {
            let m = self.axes[i].len();
            x[i] = self.axes[i][flat % m];
            flat /= m;
        }
        x
    }

    fn index(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        let mut f = flat;
        for i in (0..self.axes.len()).rev() {
            let m = self.axes[i].len();
            idx[i] = f % m;
            f /= m;
        }
        idx
    }

    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (i, a)| acc * a.len() + i)
    }
}

fn bisect_scalar(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    // Invariant: f(a) > 0 >= f(b) after orientation.
    if !(f(a) > 0.0) {
        std::mem::swap(&mut a, &mut b);
    }
    while (a - b).abs() > SNAP_WIDTH {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        if f(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    (b, a)
}

/// Functions whose zero sets are snapped: inner functions, set rows and the
/// functional constraint minus its budget.
fn snap_functions(problem: &ProblemSpec) -> Vec<Box<dyn Fn(&[f64]) -> f64 + Sync + '_>> {
    let mut out: Vec<Box<dyn Fn(&[f64]) -> f64 + Sync + '_>> = Vec::new();
    for g in problem.inner_functions() {
        out.push(Box::new(move |x: &[f64]| g.eval(x)));
    }
    for r in problem.feasible_set.rows() {
        out.push(Box::new(move |x: &[f64]| r.a.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - r.d));
    }
    if problem.has_functional_constraint() {
        out.push(Box::new(move |x: &[f64]| problem.functional(x) - problem.budget));
    }
    out
}

/// Builds the augmented grid at one refinement level. Coordinates of `anchor`
/// are always included.
pub fn build_grid(problem: &ProblemSpec, spec: &GridSpec, level: usize, anchor: Option<&[f64]>, exec: Exec) -> Result<Grid> {
    let n = problem.dim();
    if spec.resolution.len() != n {
        return Err(Error::Dimension { expected: n, got: spec.resolution.len() });
    }
    if n > 3 {
        return Err(Error::BudgetExceeded(format!("grid oracle supports n <= 3, got {n}")));
    }
    let (lo, hi) = problem
        .feasible_set
        .bounding_box()
        .ok_or_else(|| Error::Unbounded("grid oracle needs a bounded set".into()))?;
    let res = spec.at_level(level);
    let base: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            if hi[i] == lo[i] {
                vec![lo[i]]
            } else {
                (0..res[i]).map(|k| lo[i] + (hi[i] - lo[i]) * k as f64 / (res[i] - 1) as f64).collect()
            }
        })
        .collect();
    let spacing = (0..n)
        .map(|i| if base[i].len() > 1 { (hi[i] - lo[i]) / (res[i] - 1) as f64 } else { 0.0 })
        .fold(0.0, f64::max);
    let mut axes = base.clone();
    if let Some(a) = anchor {
        for i in 0..n {
            axes[i].push(a[i]);
        }
    }
    if spec.snap {
        let funcs = snap_functions(problem);
        let base_grid = Grid { axes: base.clone(), spacing };
        for i in 0..n {
            let m = base[i].len();
            if m < 2 {
                continue;
            }
            let others = base_grid.len() / m;
            // One line per combination of the other coordinates.
            let found: Vec<Vec<f64>> = exec.map_range(others, |line| {
                let mut x = vec![0.0; n];
                let mut rest = line;
                for j in (0..n).rev() {
                    if j == i {
                        continue;
                    }
                    let mj = base[j].len();
                    x[j] = base[j][rest % mj];
                    rest /= mj;
                }
                let mut out = Vec::new();
                for f in &funcs {
                    let along = |u: f64| {
                        let mut y = x.clone();
                        y[i] = u;
                        f(&y)
                    };
                    let vals: Vec<f64> = base[i].iter().map(|&u| along(u)).collect();
                    for k in 0..m - 1 {
                        if (vals[k] > 0.0) != (vals[k + 1] > 0.0) {
                            let (neg, pos) = bisect_scalar(&along, base[i][k], base[i][k + 1]);
                            out.push(neg);
                            out.push(pos);
                            // Secant root of the final bracket: exact for affine
                            // data, so coinciding zero sets share a point.
                            let (fn_, fp) = (along(neg), along(pos));
                            let root = neg - fn_ * (pos - neg) / (fp - fn_);
                            if root.is_finite() && (root - neg) * (root - pos) <= 0.0 {
                                out.push(root);
                            }
                        }
                    }
                }
                out
            });
            axes[i].extend(found.into_iter().flatten());
        }
    }
    for a in &mut axes {
        a.sort_by(f64::total_cmp);
        a.dedup();
    }
    let grid = Grid { axes, spacing };
    if grid.len() > MAX_GRID_POINTS {
        return Err(Error::BudgetExceeded(format!("{} grid points exceed {MAX_GRID_POINTS}", grid.len())));
    }
    Ok(grid)
}

#[derive(Clone, Debug, Serialize)]
pub struct GridRow {
    pub x: Vec<f64>,
    pub objective: f64,
    pub functional: f64,
    pub in_set: bool,
    pub feasible: bool,
}

/// Exact evaluation at every grid point, in grid order.
pub fn evaluate_grid(problem: &ProblemSpec, grid: &Grid, exec: Exec) -> Vec<GridRow> {
    exec.map_range(grid.len(), |j| {
        let x = grid.point(j);
        let in_set = problem.feasible_set.contains(&x, 0.0);
        let functional = problem.functional(&x);
        let feasible = in_set && (!problem.has_functional_constraint() || functional <= problem.budget);
        GridRow { objective: problem.phi(&x), functional, in_set, feasible, x }
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GridResult {
    /// Best feasible value at the finest level.
    pub value: Option<f64>,
    /// First minimizer in lexicographic order.
    pub best: Option<Vec<f64>>,
    /// All feasible points within `value_tol` of the best value.
    pub argmin: Vec<Vec<f64>>,
    /// Best value per refinement level, coarsest first.
    pub level_values: Vec<Option<f64>>,
    pub value_tol: f64,
    pub spacing: f64,
    pub lipschitz: f64,
    pub points: usize,
    pub feasible_points: usize,
}

impl GridResult {
    /// The two finest levels agree within `value_tol`.
    pub fn resolved(&self) -> bool {
        match self.level_values.as_slice() {
            [.., Some(a), Some(b)] => (a - b).abs() <= self.value_tol,
            [Some(_)] => true,
            _ => false,
        }
    }
}

/// Lipschitz estimate of `c + sum |phi_k|` used in the grid tolerance.
pub fn grid_lipschitz(problem: &ProblemSpec) -> Result<f64> {
    let set = &problem.feasible_set;
    let mut l = lipschitz_of(&problem.base_cost, set, 2000, 0)?.value;
    for (k, t) in problem.objective_terms.iter().enumerate() {
        l += lipschitz_of(&t.multiplier, set, 2000, 1 + k as u64)?.value;
    }
    Ok(l)
}

/// `1e-6 + Lip * spacing`.
pub fn value_tolerance(lipschitz: f64, spacing: f64) -> f64 {
    1e-6 + lipschitz * spacing
}

fn minimize_rows(rows: &[GridRow], tol: f64) -> (Option<f64>, Option<Vec<f64>>, Vec<Vec<f64>>) {
    let mut best: Option<(f64, usize)> = None;
    for (j, r) in rows.iter().enumerate() {
        if r.feasible && best.map_or(true, |(v, _)| r.objective < v) {
            best = Some((r.objective, j));
        }
    }
    let Some((v, j)) = best else { return (None, None, vec![]) };
    let argmin = rows.iter().filter(|r| r.feasible && r.objective <= v + tol).map(|r| r.x.clone()).collect();
    (Some(v), Some(rows[j].x.clone()), argmin)
}

/// Grid global minimization with refinement.
pub fn grid_minimize(problem: &ProblemSpec, spec: &GridSpec, exec: Exec) -> Result<GridResult> {
    let lipschitz = grid_lipschitz(problem)?;
    let mut level_values = Vec::with_capacity(spec.refine + 1);
    let mut last = None;
    for level in 0..=spec.refine {
        let grid = build_grid(problem, spec, level, None, exec)?;
        let rows = evaluate_grid(problem, &grid, exec);
        let tol = value_tolerance(lipschitz, grid.spacing);
        let (v, best, argmin) = minimize_rows(&rows, tol);
        level_values.push(v);
        let feasible_points = rows.iter().filter(|r| r.feasible).count();
        last = Some((v, best, argmin, tol, grid.spacing, rows.len(), feasible_points));
    }
    let (value, best, argmin, value_tol, spacing, points, feasible_points) = last.expect("at least one level");
    Ok(GridResult { value, best, argmin, level_values, value_tol, spacing, lipschitz, points, feasible_points })
}

/// Minimum of the objective over feasible grid points of the set intersected
/// with the sup-norm ball around `center`. The center itself is a grid point.
pub fn grid_local_min_value(problem: &ProblemSpec, center: &[f64], radius: f64, resolution: usize, exec: Exec) -> Result<Option<f64>> {
    let set = &problem.feasible_set;
    let lo: Vec<f64> = set.lower().iter().zip(center).map(|(l, c)| l.max(c - radius)).collect();
    let hi: Vec<f64> = set.upper().iter().zip(center).map(|(u, c)| u.min(c + radius)).collect();
    let mut local = problem.clone();
    local.feasible_set = PolyhedralSet::new(set.dim(), set.rows().to_vec(), lo, hi)?;
    let spec = GridSpec::uniform(problem.dim(), resolution, 0);
    let grid = build_grid(&local, &spec, 0, Some(center), exec)?;
    let rows = evaluate_grid(&local, &grid, exec);
    Ok(minimize_rows(&rows, 0.0).0)
}

// ---------------------------------------------------------------------------
// Reformulations by enumeration

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MpccVariant {
    /// `s` binary-valued through complementarity with both parts of `g`.
    Mpcc1,
    /// `s in [0, 1]`, complementary only to the positive part of `g`.
    Mpcc2,
    /// `z` binary, `g <= 0` when `z = 1`, objective `phi (1 - z)`.
    OnOff,
}

impl MpccVariant {
    pub const ALL: [MpccVariant; 3] = [MpccVariant::Mpcc1, MpccVariant::Mpcc2, MpccVariant::OnOff];

    pub fn name(self) -> &'static str {
        match self {
            MpccVariant::Mpcc1 => "mpcc1",
            MpccVariant::Mpcc2 => "mpcc2",
            MpccVariant::OnOff => "onoff",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EnumerationWitness {
    pub x: Vec<f64>,
    /// `s` for the complementarity forms, `z` for on/off; objective terms first.
    pub pattern: Vec<u8>,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnumerationResult {
    pub variant: MpccVariant,
    pub value: Option<f64>,
    /// Best point per pattern that ties the overall best, in pattern order.
    pub witnesses: Vec<EnumerationWitness>,
    pub patterns: usize,
    pub points: usize,
}

/// Largest `patterns * grid points` an enumeration will visit.
pub const ENUMERATION_BUDGET: usize = 1 << 32;

struct PointData {
    cost: f64,
    phi: Vec<f64>,
    inner: Vec<f64>,
    in_set: bool,
}

/// Minimizes a reformulation over the finest augmented grid, one binary
/// pattern at a time. For the continuous `s` of the second complementarity
/// form the objective is linear in `s` on its slice, so binary patterns
/// attain the optimum when the constraint terms do not couple `s`.
pub fn solve_mpcc_by_enumeration(problem: &ProblemSpec, variant: MpccVariant, spec: &GridSpec, exec: Exec) -> Result<EnumerationResult> {
    let grid = build_grid(problem, spec, spec.refine, None, exec)?;
    solve_on_grid(problem, variant, &grid, exec, value_tolerance(grid_lipschitz(problem)?, grid.spacing))
}

fn solve_on_grid(problem: &ProblemSpec, variant: MpccVariant, grid: &Grid, exec: Exec, tol: f64) -> Result<EnumerationResult> {
    let k = problem.n_objective();
    let terms = k + problem.n_constraint();
    let patterns = 1usize << terms;
    if patterns.saturating_mul(grid.len()) > ENUMERATION_BUDGET || terms >= 32 {
        return Err(Error::BudgetExceeded(format!("2^{terms} patterns on {} points", grid.len())));
    }
    let data: Vec<PointData> = exec.map_range(grid.len(), |j| {
        let x = grid.point(j);
        let all = problem.objective_terms.iter().chain(&problem.constraint_terms);
        let (phi, inner) = all.map(|t| (t.multiplier.eval(&x), t.inner.eval(&x))).unzip();
        PointData { cost: problem.base_cost.eval(&x), phi, inner, in_set: problem.feasible_set.contains(&x, 0.0) }
    });
    let best_per_pattern: Vec<Option<(f64, usize)>> = exec.map_range(patterns, |p| {
        let bit = |i: usize| p >> i & 1 == 1;
        let mut best: Option<(f64, usize)> = None;
        for (j, d) in data.iter().enumerate() {
            if !d.in_set {
                continue;
            }
            let mut ok = true;
            let mut value = d.cost;
            let mut row = 0.0;
            for i in 0..terms {
                let g = d.inner[i];
                // Weight of the term's multiplier and the pattern's feasibility rows.
                let (weight, feasible) = match variant {
                    MpccVariant::Mpcc1 => {
                        let s = bit(i);
                        (s as u8 as f64, if s { g >= 0.0 } else { g <= 0.0 })
                    }
                    MpccVariant::Mpcc2 => {
                        let s = bit(i);
                        (s as u8 as f64, s || g <= 0.0)
                    }
                    MpccVariant::OnOff => {
                        let z = bit(i);
                        (1.0 - z as u8 as f64, !z || g <= 0.0)
                    }
                };
                if !feasible {
                    ok = false;
                    break;
                }
                if i < k {
                    value += weight * d.phi[i];
                } else {
                    row += weight * d.phi[i];
                }
            }
            if !ok || (problem.has_functional_constraint() && row > problem.budget) {
                continue;
            }
            if best.map_or(true, |(v, _)| value < v) {
                best = Some((value, j));
            }
        }
        best
    });
    let value = best_per_pattern.iter().flatten().map(|b| b.0).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
    let witnesses = match value {
        Some(v) => best_per_pattern
            .iter()
            .enumerate()
            .filter_map(|(p, b)| {
                let (bv, j) = (*b)?;
                (bv <= v + tol).then(|| EnumerationWitness {
                    x: grid.point(j),
                    pattern: (0..terms).map(|i| (p >> i & 1) as u8).collect(),
                    value: bv,
                })
            })
            .collect(),
        None => vec![],
    };
    Ok(EnumerationResult { variant, value, witnesses, patterns, points: grid.len() })
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceRow {
    pub variant: MpccVariant,
    pub value: Option<f64>,
    /// Reformulation value minus the grid value.
    pub gap: Option<f64>,
    /// Sign condition the equivalence rests on: zero-set for the first
    /// complementarity form, sublevel for the others.
    pub sign_condition: bool,
    pub agrees: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceReport {
    pub grid: GridResult,
    pub rows: Vec<EquivalenceRow>,
    pub value_tol: f64,
    /// Equivalence is only claimed without constraint terms.
    pub covered: bool,
    /// Rows whose sign condition holds but whose values disagree.
    pub violations: Vec<String>,
    pub notes: Vec<String>,
}

impl EquivalenceReport {
    pub fn gap_detected(&self) -> bool {
        self.rows.iter().any(|r| !r.agrees)
    }
}

/// Grid value against all three reformulations on the same grid.
pub fn equivalence_report(problem: &ProblemSpec, spec: &GridSpec, exec: Exec) -> Result<EquivalenceReport> {
    let grid_result = grid_minimize(problem, spec, exec)?;
    let grid = build_grid(problem, spec, spec.refine, None, exec)?;
    let tol = grid_result.value_tol;
    let sign_res = spec.at_level(spec.refine).into_iter().max().unwrap_or(2).max(41);
    let passes = |mode: SignMode| -> Result<bool> {
        Ok(check_sign_conditions(problem, &mode, sign_res)?.iter().all(|c| c.passed))
    };
    let zero_set = passes(SignMode::ZeroSet)?;
    let sublevel = passes(SignMode::Sublevel)?;
    let covered = problem.n_constraint() == 0;
    let mut notes = Vec::new();
    if !covered {
        notes.push("constraint terms present: reformulations extended term-wise, equivalence not claimed".into());
    }
    if !grid_result.resolved() {
        notes.push("two finest grid levels disagree; equivalence assertions skipped".into());
    }
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    for variant in MpccVariant::ALL {
        let e = solve_on_grid(problem, variant, &grid, exec, tol)?;
        let gap = match (e.value, grid_result.value) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        };
        let agrees = match gap {
            Some(g) => g.abs() <= tol,
            None => e.value.is_none() && grid_result.value.is_none(),
        };
        let sign_condition = if variant == MpccVariant::Mpcc1 { zero_set } else { sublevel };
        if covered && sign_condition && grid_result.resolved() && !agrees {
            violations.push(format!("{} differs from the grid by {gap:?} although its sign condition holds", variant.name()));
        }
        rows.push(EquivalenceRow { variant, value: e.value, gap, sign_condition, agrees });
    }
    Ok(EquivalenceReport { grid: grid_result, rows, value_tol: tol, covered, violations, notes })
}

// ---------------------------------------------------------------------------
// Certified local minimizers

#[derive(Clone, Debug, Serialize)]
pub struct LocalMinimizer {
    pub x: Vec<f64>,
    pub value: f64,
    /// Smallest value on the local certification grid.
    pub local_grid_value: f64,
}

/// Radius and resolution of the certification grid.
pub const CERT_RADIUS_SPACINGS: f64 = 1.0;
pub const CERT_RESOLUTION: usize = 31;
/// Polished minimizers on a constraint boundary land within roundoff of it.
const POLISH_FEAS_TOL: f64 = 1e-9;

/// Discrete local minima of the grid, polished by descent on each compatible
/// sign pattern and kept when no point of a finer local grid is lower.
pub fn certified_local_minimizers(problem: &ProblemSpec, spec: &GridSpec, exec: Exec) -> Result<Vec<LocalMinimizer>> {
    let n = problem.dim();
    let grid = build_grid(problem, spec, spec.refine, None, exec)?;
    let rows = evaluate_grid(problem, &grid, exec);
    let value = |j: usize| if rows[j].feasible { rows[j].objective } else { f64::INFINITY };
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(n as u32))
        .map(|m| (0..n).map(|i| (m / 3usize.pow(i as u32) % 3) as i64 - 1).collect())
        .filter(|o: &Vec<i64>| o.iter().any(|&d| d != 0))
        .collect();
    let candidates: Vec<usize> = (0..grid.len())
        .filter(|&j| {
            let v = value(j);
            if !v.is_finite() {
                return false;
            }
            let idx = grid.index(j);
            offsets.iter().all(|o| {
                let nb: Option<Vec<usize>> = idx
                    .iter()
                    .zip(o)
                    .zip(&grid.axes)
                    .map(|((&i, &d), a)| {
                        let k = i as i64 + d;
                        (k >= 0 && (k as usize) < a.len()).then_some(k as usize)
                    })
                    .collect();
                nb.map_or(true, |nb| v <= value(grid.flat(&nb)))
            })
        })
        .collect();
    let stop = StopRule { dd_tol: 1e-10, max_iter: 2000, ..StopRule::default() };
    let radius = CERT_RADIUS_SPACINGS * grid.spacing;
    let polished: Vec<Vec<LocalMinimizer>> = exec.map(&candidates, |&j| {
        polish(problem, &rows[j].x, &stop)
            .into_iter()
            .filter_map(|x| {
                if !problem.is_feasible(&x, POLISH_FEAS_TOL) {
                    return None;
                }
                let v = problem.phi(&x);
                let local = grid_local_min_value(problem, &x, radius, CERT_RESOLUTION, Exec::Sequential).ok()??;
                (v <= local + 1e-9 * v.abs().max(1.0)).then(|| LocalMinimizer { x, value: v, local_grid_value: local })
            })
            .collect()
    });
    let mut out: Vec<LocalMinimizer> = Vec::new();
    for m in polished.into_iter().flatten() {
        if !out.iter().any(|o| o.x.iter().zip(&m.x).all(|(a, b)| (a - b).abs() <= 1e-6)) {
            out.push(m);
        }
    }
    Ok(out)
}

/// Inner functions within this of zero allow both signs when polishing.
const POLISH_SIGN_TOL: f64 = 1e-8;

fn polish(problem: &ProblemSpec, x0: &[f64], stop: &StopRule) -> Vec<Vec<f64>> {
    let n = problem.dim();
    let k = problem.n_objective();
    let terms: Vec<_> = problem.objective_terms.iter().chain(&problem.constraint_terms).collect();
    let choices: Vec<Vec<bool>> = terms
        .iter()
        .map(|t| {
            let g = t.inner.eval(x0);
            if g > POLISH_SIGN_TOL {
                vec![true]
            } else if g < -POLISH_SIGN_TOL {
                vec![false]
            } else {
                vec![false, true]
            }
        })
        .collect();
    let mut patterns: Vec<Vec<bool>> = vec![vec![]];
    for c in &choices {
        patterns = patterns.into_iter().flat_map(|p| c.iter().map(move |&b| [p.clone(), vec![b]].concat())).collect();
    }
    let mut out = Vec::new();
    for up in patterns {
        let mut obj = problem.base_cost.clone();
        let mut row = Vec::new();
        let mut cons = Vec::new();
        for (i, (t, &u)) in terms.iter().zip(&up).enumerate() {
            if u {
                if i < k {
                    obj = obj.add(&t.multiplier);
                } else {
                    row.push(t.multiplier.clone());
                }
                cons.push(t.inner.neg());
            } else {
                cons.push(t.inner.clone());
            }
        }
        if problem.has_functional_constraint() {
            cons.push(FunctionHandle::sum(&row, n).sub(&FunctionHandle::constant(problem.budget, n)));
        }
        if let Ok(r) = inner_solve(&obj, &problem.feasible_set, &cons, x0, stop) {
            if r.status == InnerStatus::Converged {
                out.push(r.x);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_l0, HeavisideTerm};
    use proptest::prelude::*;

    fn h(s: &str, n: usize) -> FunctionHandle {
        FunctionHandle::parse(s, n).unwrap()
    }

    fn boxed(n: usize, a: f64) -> PolyhedralSet {
        PolyhedralSet::boxed(vec![-a; n], vec![a; n]).unwrap()
    }

    fn l0_problem() -> ProblemSpec {
        ProblemSpec::new(h("(x1 - 1)^2", 1), build_l0(&[0.5]).unwrap(), vec![], None, boxed(1, 2.0)).unwrap()
    }

    #[test]
    fn l0_grid_and_reformulations() {
        let spec = GridSpec::uniform(1, 41, 1);
        let g = grid_minimize(&l0_problem(), &spec, Exec::Parallel).unwrap();
        assert!((g.value.unwrap() - 0.5).abs() < 1e-12);
        assert!((g.best.as_ref().unwrap()[0] - 1.0).abs() < 1e-12);
        let e = solve_mpcc_by_enumeration(&l0_problem(), MpccVariant::Mpcc1, &spec, Exec::Parallel).unwrap();
        assert_eq!(e.value, g.value);
        let r = equivalence_report(&l0_problem(), &spec, Exec::Parallel).unwrap();
        assert!(r.rows.iter().all(|r| r.agrees && r.sign_condition), "{:?}", r.rows);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn snapping_finds_off_grid_crossings() {
        // Zero set at 1/3 is not a node of the 5-point grid.
        let p = ProblemSpec::new(
            h("-x1", 1),
            vec![HeavisideTerm::open(h("1", 1), h("x1 - 1/3", 1))],
            vec![],
            None,
            boxed(1, 1.0),
        )
        .unwrap();
        let g = grid_minimize(&p, &GridSpec::uniform(1, 5, 0), Exec::Sequential).unwrap();
        assert!((g.value.unwrap() + 1.0 / 3.0).abs() < 1e-11, "{:?}", g.value);
        let unsnapped = GridSpec { snap: false, ..GridSpec::uniform(1, 5, 0) };
        let u = grid_minimize(&p, &unsnapped, Exec::Sequential).unwrap();
        assert_eq!(u.value, Some(0.0));
    }

    #[test]
    fn functional_boundary_is_snapped_on_the_feasible_side() {
        let p = ProblemSpec::new(
            h("-x1", 1),
            vec![],
            vec![HeavisideTerm::open(h("3 * x1", 1), h("x1", 1))],
            Some(0.7),
            boxed(1, 1.0),
        )
        .unwrap();
        let g = grid_minimize(&p, &GridSpec::uniform(1, 9, 0), Exec::Sequential).unwrap();
        let x = g.best.unwrap()[0];
        assert!(3.0 * x <= 0.7 && (x - 0.7 / 3.0).abs() < 1e-11, "{x}");
    }

    #[test]
    fn smooth_convex_matches_analytic_minimizer() {
        let p = ProblemSpec::new(h("(x1 - 0.25)^2 + (x2 + 0.5)^2", 2), vec![], vec![], None, boxed(2, 1.0)).unwrap();
        let g = grid_minimize(&p, &GridSpec::uniform(2, 9, 0), Exec::Parallel).unwrap();
        assert_eq!(g.best.unwrap(), vec![0.25, -0.5]);
        assert_eq!(g.value, Some(0.0));
    }

    #[test]
    fn infeasible_everywhere_gives_empty_mask() {
        let p = ProblemSpec::new(
            h("x1", 1),
            vec![],
            vec![HeavisideTerm::open(h("1", 1), h("1", 1))],
            Some(0.5),
            boxed(1, 1.0),
        )
        .unwrap();
        let g = grid_minimize(&p, &GridSpec::uniform(1, 11, 0), Exec::Sequential).unwrap();
        assert_eq!(g.value, None);
        assert_eq!(g.feasible_points, 0);
    }

    #[test]
    fn unbounded_set_is_rejected() {
        let p = ProblemSpec::new(h("x1", 1), vec![], vec![], None, PolyhedralSet::whole_space(1)).unwrap();
        assert!(matches!(grid_minimize(&p, &GridSpec::uniform(1, 5, 0), Exec::Sequential), Err(Error::Unbounded(_))));
    }

    #[test]
    fn sublevel_sign_violation_opens_a_gap() {
        // phi = x is negative where g = x is negative; the zero-set condition holds.
        let p = ProblemSpec::new(h("0", 1), vec![HeavisideTerm::open(h("x1", 1), h("x1", 1))], vec![], None, boxed(1, 1.0)).unwrap();
        let r = equivalence_report(&p, &GridSpec::uniform(1, 21, 1), Exec::Parallel).unwrap();
        let by = |v| r.rows.iter().find(|r| r.variant == v).unwrap();
        assert!(by(MpccVariant::Mpcc1).agrees && by(MpccVariant::Mpcc1).sign_condition);
        for v in [MpccVariant::Mpcc2, MpccVariant::OnOff] {
            assert!(!by(v).agrees && !by(v).sign_condition);
            assert!((by(v).gap.unwrap() + 1.0).abs() < 1e-12);
        }
        assert!(r.violations.is_empty());
    }

    #[test]
    fn onoff_all_off_is_the_plain_sum() {
        // With every z = 0 the on/off value is min c + sum phi; check via the pattern witness.
        let p = ProblemSpec::new(
            h("(x1 - 0.5)^2", 1),
            vec![HeavisideTerm::open(h("-1", 1), h("x1 - 2", 1))],
            vec![],
            None,
            boxed(1, 1.0),
        )
        .unwrap();
        let e = solve_mpcc_by_enumeration(&p, MpccVariant::OnOff, &GridSpec::uniform(1, 21, 0), Exec::Sequential).unwrap();
        assert_eq!(e.value, Some(-1.0));
        assert_eq!(e.witnesses[0].pattern, vec![0]);
    }

    #[test]
    fn empty_term_problem_agrees_everywhere() {
        let p = ProblemSpec::new(h("x1^2", 1), vec![], vec![], None, boxed(1, 1.0)).unwrap();
        let r = equivalence_report(&p, &GridSpec::uniform(1, 11, 0), Exec::Sequential).unwrap();
        assert!(r.rows.iter().all(|r| r.agrees));
    }

    #[test]
    fn local_minimizers_of_l0_instance() {
        let mins = certified_local_minimizers(&l0_problem(), &GridSpec::uniform(1, 41, 0), Exec::Parallel).unwrap();
        let mut xs: Vec<f64> = mins.iter().map(|m| m.x[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs.len(), 2, "{xs:?}");
        assert!(xs[0].abs() < 1e-9 && (xs[1] - 1.0).abs() < 1e-7, "{xs:?}");
    }

    #[test]
    fn local_grid_contains_center() {
        let v = grid_local_min_value(&l0_problem(), &[0.0], 0.1, 7, Exec::Sequential).unwrap();
        assert_eq!(v, Some(1.0));
    }

    #[test]
    fn parallel_and_sequential_grids_are_identical() {
        let p = ProblemSpec::new(
            h("(x1 - 0.3)^2 + x2^2", 2),
            build_l0(&[0.2, 0.2]).unwrap(),
            vec![],
            None,
            boxed(2, 1.0),
        )
        .unwrap();
        let spec = GridSpec::uniform(2, 15, 1);
        let a = grid_minimize(&p, &spec, Exec::Sequential).unwrap();
        let b = grid_minimize(&p, &spec, Exec::Parallel).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.argmin, b.argmin);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        // Nested grids: doubling the resolution never raises the minimum.
        #[test]
        fn refinement_is_monotone(a in -0.9f64..0.9, b in -0.9f64..0.9, w in 0.05f64..1.0) {
            let p = ProblemSpec::new(
                h(&format!("(x1 - {a})^2 + 0.5 * (x2 - {b})^2"), 2),
                build_l0(&[w, w]).unwrap(),
                vec![],
                None,
                boxed(2, 1.0),
            ).unwrap();
            let g = grid_minimize(&p, &GridSpec::uniform(2, 7, 2), Exec::Parallel).unwrap();
            let v: Vec<f64> = g.level_values.iter().map(|v| v.unwrap()).collect();
            prop_assert!(v[1] <= v[0] + 1e-12 && v[2] <= v[1] + 1e-12, "{:?}", v);
        }
    }
}
