//! Direction subproblems over piecewise-linear forms: the exact LP minimum
//! over a polyhedral step region (used as a stationarity measure) and a
//! proximal QP step for descent.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT, ZeroConeT};

use crate::functions::PlForm;
use crate::lp::{LinearProgram, LpFailure, Sense};
use crate::model::{PolyhedralSet, TangentCone};

/// `{v : lo <= v <= hi, a.v <= r for (a, r) in rows}`, optionally intersected
/// with the unit l1 ball.
#[derive(Clone, Debug)]
pub(crate) struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub rows: Vec<(Vec<f64>, f64)>,
    pub l1: bool,
}

impl Region {
    /// Tangent cone intersected with the unit box (or unit l1 ball).
    pub fn from_tangent(t: &TangentCone, l1: bool) -> Self {
        Region {
            lo: t.at_lower.iter().map(|&b| if b { 0.0 } else { -1.0 }).collect(),
            hi: t.at_upper.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect(),
            rows: t.rows.iter().map(|a| (a.clone(), 0.0)).collect(),
            l1,
        }
    }

    /// Steps `v` with `x + v` in the set and `|v|_inf <= radius`.
    pub fn steps(set: &PolyhedralSet, x: &[f64], radius: f64) -> Self {
        let lo = set.lower().iter().zip(x).map(|(l, xi)| (l - xi).max(-radius).min(0.0)).collect();
        let hi = set.upper().iter().zip(x).map(|(u, xi)| (u - xi).min(radius).max(0.0)).collect();
        let rows = set
            .rows()
            .iter()
            .map(|r| {
                let ax: f64 = r.a.iter().zip(x).map(|(a, b)| a * b).sum();
                (r.a.clone(), (r.d - ax).max(0.0))
            })
            .collect();
        Region { lo, hi, rows, l1: false }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    #[cfg(test)]
    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        v.iter().zip(&self.lo).all(|(a, l)| *a >= l - tol)
            && v.iter().zip(&self.hi).all(|(a, h)| *a <= h + tol)
            && self
                .rows
                .iter()
                .all(|(a, r)| a.iter().zip(v).map(|(p, q)| p * q).sum::<f64>() <= r + tol)
            && (!self.l1 || v.iter().map(|c| c.abs()).sum::<f64>() <= 1.0 + tol)
    }
}

/// Constraint `offset + form(v) <= 0`.
#[derive(Clone, Debug)]
pub(crate) struct LinearizedConstraint {
    pub offset: f64,
    pub form: PlForm,
}

/// Number of concave-piece selections over the objective and constraints.
pub(crate) fn selection_count(obj: &PlForm, cons: &[LinearizedConstraint]) -> usize {
    std::iter::once(obj)
        .chain(cons.iter().map(|c| &c.form))
        .map(|f| f.concave_pieces().len())
        .fold(1usize, |a, b| a.saturating_mul(b))
}

fn selection(obj: &PlForm, cons: &[LinearizedConstraint], mut idx: usize) -> Vec<usize> {
    std::iter::once(obj)
        .chain(cons.iter().map(|c| &c.form))
        .map(|f| {
            let r = f.concave_pieces().len();
            let s = idx % r;
            idx /= r;
            s
        })
        .collect()
}

fn diff(p: &[f64], q: &[f64]) -> Vec<f64> {
    p.iter().zip(q).map(|(a, b)| a - b).collect()
}

/// Linear rows `a.v <= r` for the selected pieces of each constraint.
fn constraint_rows(cons: &[LinearizedConstraint], sel: &[usize]) -> Vec<(Vec<f64>, f64)> {
    let mut out = Vec::new();
    for (c, &s) in cons.iter().zip(sel) {
        let q = &c.form.concave_pieces()[s];
        for p in c.form.convex_pieces() {
            out.push((diff(p, q), -c.offset));
        }
    }
    out
}

#[derive(Clone, Debug)]
pub(crate) struct DirectionMin {
    pub value: f64,
    pub direction: Vec<f64>,
    pub selections: usize,
    /// All selections were solved, so `value` is the exact minimum.
    pub exhaustive: bool,
}

/// Minimizes `obj(v)` over the region and the linearized constraints.
/// Beyond `budget` selections only the first one is solved, which yields an
/// upper bound on the minimum attained by a feasible direction.
pub(crate) fn lp_min(obj: &PlForm, cons: &[LinearizedConstraint], region: &Region, budget: usize) -> DirectionMin {
    let n = region.dim();
    let count = selection_count(obj, cons);
    let exhaustive = count <= budget;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for idx in 0..if exhaustive { count } else { 1 } {
        let sel = selection(obj, cons, idx);
        let extra = if region.l1 { n } else { 0 };
        let total = n + extra + 1;
        let z = total - 1;
        let mut lp = LinearProgram::new(total);
        for i in 0..n {
            lp.set_bounds(i, region.lo[i], region.hi[i]);
        }
        if region.l1 {
            let mut sum = vec![0.0; total];
            for i in 0..n {
                lp.set_bounds(n + i, 0.0, 1.0);
                let mut r = vec![0.0; total];
                r[i] = 1.0;
                r[n + i] = -1.0;
                lp.add_row(r.clone(), Sense::Le, 0.0);
                r[i] = -1.0;
                lp.add_row(r, Sense::Le, 0.0);
                sum[n + i] = 1.0;
            }
            lp.add_row(sum, Sense::Le, 1.0);
        }
        let pad = |mut v: Vec<f64>| {
            v.resize(total, 0.0);
            v
        };
        for (a, r) in region.rows.iter().cloned().chain(constraint_rows(cons, &sel[1..])) {
            lp.add_row(pad(a), Sense::Le, r);
        }
        lp.set_cost(z, 1.0);
        let q = &obj.concave_pieces()[sel[0]];
        for p in obj.convex_pieces() {
            let mut r = pad(diff(p, q));
            r[z] = -1.0;
            lp.add_row(r, Sense::Le, 0.0);
        }
        match lp.solve() {
            Ok(sol) => {
                let v = sol.x[..n].to_vec();
                let value = obj.eval(&v);
                if best.as_ref().map_or(true, |b| value < b.0) {
                    best = Some((value, v));
                }
            }
            Err(LpFailure::Infeasible) => {}
            Err(LpFailure::Unbounded) => unreachable!("the step region is bounded"),
        }
    }
    let (value, direction) = best.unwrap_or((0.0, vec![0.0; n]));
    DirectionMin {
        value,
        direction,
        selections: count,
        exhaustive,
    }
}

fn csc_from_dense_rows(rows: &[Vec<f64>], ncols: usize) -> CscMatrix<f64> {
    let mut colptr = vec![0usize];
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    for j in 0..ncols {
        for (i, r) in rows.iter().enumerate() {
            if r[j] != 0.0 {
                rowval.push(i);
                nzval.push(r[j]);
            }
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(rows.len(), ncols, colptr, rowval, nzval)
}

/// Proximal step: minimizes `max_i (p_i - q_sel).v + |v|^2 / (2 eta)` over
/// the region and the selected linearized constraints, for each selection
/// within `budget`, and returns the step with the smallest model value.
pub(crate) fn prox_step(
    obj: &PlForm,
    cons: &[LinearizedConstraint],
    region: &Region,
    eta: f64,
    budget: usize,
) -> Option<Vec<f64>> {
    debug_assert!(!region.l1);
    let n = region.dim();
    let count = selection_count(obj, cons).min(budget.max(1));
    let mut best: Option<(f64, Vec<f64>)> = None;
    for idx in 0..count {
        let sel = selection(obj, cons, idx);
        let total = n + 1;
        let z = n;
        let mut eq_rows: Vec<Vec<f64>> = Vec::new();
        let mut eq_rhs = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rhs = Vec::new();
        for i in 0..n {
            let mut e = vec![0.0; total];
            e[i] = 1.0;
            if region.hi[i] - region.lo[i] <= 1e-14 {
                eq_rows.push(e);
                eq_rhs.push(region.lo[i]);
            } else {
                rows.push(e.clone());
                rhs.push(region.hi[i]);
                e[i] = -1.0;
                rows.push(e);
                rhs.push(-region.lo[i]);
            }
        }
        for (mut a, r) in region.rows.iter().cloned().chain(constraint_rows(cons, &sel[1..])) {
            a.resize(total, 0.0);
            rows.push(a);
            rhs.push(r);
        }
        let q = &obj.concave_pieces()[sel[0]];
        for p in obj.convex_pieces() {
            let mut a = diff(p, q);
            a.push(-1.0);
            rows.push(a);
            rhs.push(0.0);
        }
        let pdiag: Vec<Vec<f64>> = (0..total)
            .map(|i| {
                let mut r = vec![0.0; total];
                if i < n {
                    r[i] = 1.0 / eta;
                }
                r
            })
            .collect();
        let p_mat = csc_from_dense_rows(&pdiag, total);
        let mut cost = vec![0.0; total];
        cost[z] = 1.0;
        let m_eq = eq_rows.len();
        let m_in = rows.len();
        let all: Vec<Vec<f64>> = eq_rows.into_iter().chain(rows).collect();
        let b: Vec<f64> = eq_rhs.into_iter().chain(rhs).collect();
        let a_mat = csc_from_dense_rows(&all, total);
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        if m_eq > 0 {
            cones.push(ZeroConeT(m_eq));
        }
        cones.push(NonnegativeConeT(m_in));
        let settings = DefaultSettings {
            verbose: false,
            ..DefaultSettings::default()
        };
        let Ok(mut solver) = DefaultSolver::new(&p_mat, &cost, &a_mat, &b, &cones, settings) else {
            continue;
        };
        solver.solve();
        if !matches!(solver.solution.status, SolverStatus::Solved | SolverStatus::AlmostSolved) {
            continue;
        }
        let v: Vec<f64> = solver.solution.x[..n]
            .iter()
            .zip(region.lo.iter().zip(&region.hi))
            .map(|(c, (l, h))| c.clamp(*l, *h))
            .collect();
        let model = obj.eval(&v) + v.iter().map(|c| c * c).sum::<f64>() / (2.0 * eta);
        if best.as_ref().map_or(true, |b| model < b.0) {
            best = Some((model, v));
        }
    }
    best.map(|b| b.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prox_step_is_projected_gradient_for_linear_forms() {
        let obj = PlForm::linear(vec![2.0, -1.0]);
        let region = Region {
            lo: vec![-1.0, -1.0],
            hi: vec![1.0, 0.2],
            rows: vec![],
            l1: false,
        };
        let v = prox_step(&obj, &[], &region, 0.25, 8).unwrap();
        assert!((v[0] + 0.5).abs() < 1e-6 && (v[1] - 0.2).abs() < 1e-6, "{v:?}");
    }

    #[test]
    fn prox_step_on_max_of_two_pieces() {
        // max(2v1 + v2, -v1 + 3v2) + |v|^2/2: the minimizer lies on the kink.
        let obj = PlForm::from_pieces(2, vec![vec![2.0, 1.0], vec![-1.0, 3.0]], vec![]);
        let region = Region {
            lo: vec![-1.0, -1.0],
            hi: vec![1.0, 1.0],
            rows: vec![],
            l1: false,
        };
        let v = prox_step(&obj, &[], &region, 1.0, 8).unwrap();
        assert!((v[0] + 2.0 / 3.0).abs() < 1e-6 && (v[1] + 1.0).abs() < 1e-6, "{v:?}");
    }

    #[test]
    fn lp_min_with_dc_objective_enumerates() {
        // |v| - ... : form max(v, -v) - max(0.5 v, -0.5 v) = 0.5|v|, min 0.
        let obj = PlForm::from_pieces(1, vec![vec![1.0], vec![-1.0]], vec![vec![0.5], vec![-0.5]]);
        let region = Region {
            lo: vec![-1.0],
            hi: vec![1.0],
            rows: vec![],
            l1: false,
        };
        let m = lp_min(&obj, &[], &region, 16);
        assert!(m.exhaustive && m.value.abs() < 1e-12);
        // -|v| has minimum -1 at either end.
        let m = lp_min(&obj.neg(), &[], &region, 16);
        assert!((m.value + 0.5).abs() < 1e-12);
    }

    #[test]
    fn step_region_respects_set() {
        let set = PolyhedralSet::new(
            2,
            vec![crate::model::LinearInequality { a: vec![1.0, 1.0], d: 1.0 }],
            vec![0.0, 0.0],
            vec![2.0, 2.0],
        )
        .unwrap();
        let r = Region::steps(&set, &[0.5, 0.25], 1.0);
        assert_eq!(r.lo, vec![-0.5, -0.25]);
        assert_eq!(r.hi, vec![1.0, 1.0]);
        assert!((r.rows[0].1 - 0.25).abs() < 1e-15);
        let obj = PlForm::linear(vec![-1.0, -2.0]);
        let v = prox_step(&obj, &[], &r, 10.0, 8).unwrap();
        assert!(r.contains(&v, 1e-8), "{v:?}");
        assert!(!r.contains(&[0.5, 0.5], 1e-8));
    }
}
