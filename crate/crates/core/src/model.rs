//! Problem data: polyhedral sets, Heaviside terms, canonical problems and
//! builders for the common source structures.

use rand::Rng;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::functions::{Expr, FunctionHandle};
use crate::lp::{LinearProgram, LpFailure, Sense};

/// Open Heaviside `1(s > 0)`.
pub fn heaviside_open(s: f64) -> f64 {
    if s > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Closed Heaviside `1(s >= 0)`.
pub fn heaviside_closed(s: f64) -> f64 {
    if s >= 0.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Flavor {
    Open,
    Closed,
}

/// `multiplier(x) * 1(inner(x) > 0)` or its closed variant.
#[derive(Clone, Debug)]
pub struct HeavisideTerm {
    pub multiplier: FunctionHandle,
    pub inner: FunctionHandle,
    pub flavor: Flavor,
}

impl HeavisideTerm {
    pub fn new(multiplier: FunctionHandle, inner: FunctionHandle, flavor: Flavor) -> Self {
        HeavisideTerm {
            multiplier,
            inner,
            flavor,
        }
    }

    pub fn open(multiplier: FunctionHandle, inner: FunctionHandle) -> Self {
        Self::new(multiplier, inner, Flavor::Open)
    }

    pub fn closed(multiplier: FunctionHandle, inner: FunctionHandle) -> Self {
        Self::new(multiplier, inner, Flavor::Closed)
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn indicator(&self, x: &[f64]) -> f64 {
        let s = self.inner.eval(x);
        match self.flavor {
            Flavor::Open => heaviside_open(s),
            Flavor::Closed => heaviside_closed(s),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.indicator(x) == 0.0 {
            0.0
        } else {
            self.multiplier.eval(x)
        }
    }
}

/// `a . x <= d`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearInequality {
    pub a: Vec<f64>,
    pub d: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `{x : a_i . x <= d_i, lower <= x <= upper}`; bounds may be infinite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolyhedralSet {
    dim: usize,
    rows: Vec<LinearInequality>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Rows of the tangent cone of a polyhedral set at a point.
#[derive(Clone, Debug, Default)]
pub struct TangentCone {
    /// `a . v <= 0` for each active inequality.
    pub rows: Vec<Vec<f64>>,
    /// Coordinates with an active lower bound (`v_i >= 0`).
    pub at_lower: Vec<bool>,
    /// Coordinates with an active upper bound (`v_i <= 0`).
    pub at_upper: Vec<bool>,
}

impl TangentCone {
    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        self.rows.iter().all(|a| dot(a, v) <= tol)
            && v.iter().enumerate().all(|(i, &vi)| {
                (!self.at_lower[i] || vi >= -tol) && (!self.at_upper[i] || vi <= tol)
            })
    }
}

impl PolyhedralSet {
    /// Validates dimensions and nonemptiness.
    pub fn new(dim: usize, rows: Vec<LinearInequality>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(dim, lower.len())?;
        check_dim(dim, upper.len())?;
        for r in &rows {
            check_dim(dim, r.a.len())?;
        }
        for i in 0..dim {
            if !(lower[i] <= upper[i]) {
                return Err(Error::InvalidModel(format!(
                    "bound {} has lower {} above upper {}",
                    i + 1,
                    lower[i],
                    upper[i]
                )));
            }
        }
        let set = PolyhedralSet {
            dim,
            rows,
            lower,
            upper,
        };
        if set.solve_linear(&vec![0.0; dim]).is_err_and(|e| e == LpFailure::Infeasible) {
            return Err(Error::InvalidModel("polyhedral set is empty".into()));
        }
        Ok(set)
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        Self::new(lower.len(), Vec::new(), lower, upper)
    }

    pub fn whole_space(dim: usize) -> Self {
        PolyhedralSet {
            dim,
            rows: Vec::new(),
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[LinearInequality] {
        &self.rows
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Writes the set's bounds and rows into the first `dim` variables of `lp`.
    pub fn add_to_lp(&self, lp: &mut LinearProgram) {
        for i in 0..self.dim {
            lp.set_bounds(i, self.lower[i], self.upper[i]);
        }
        let n = lp.n_vars();
        for r in &self.rows {
            let mut c = r.a.clone();
            c.resize(n, 0.0);
            lp.add_row(c, Sense::Le, r.d);
        }
    }

    /// Minimizes `c . x` over the set.
    pub fn solve_linear(&self, c: &[f64]) -> std::result::Result<(Vec<f64>, f64), LpFailure> {
        let mut lp = LinearProgram::new(self.dim);
        self.add_to_lp(&mut lp);
        for (i, &ci) in c.iter().enumerate() {
            lp.set_cost(i, ci);
        }
        lp.solve().map(|s| (s.x, s.objective))
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim
            && x
                .iter()
                .enumerate()
                .all(|(i, &xi)| xi >= self.lower[i] - tol && xi <= self.upper[i] + tol)
            && self.rows.iter().all(|r| dot(&r.a, x) <= r.d + tol)
    }

    /// Coordinate-wise extent, or `None` if unbounded.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut lo = self.lower.clone();
        let mut hi = self.upper.clone();
        for i in 0..self.dim {
            let mut e = vec![0.0; self.dim];
            if !lo[i].is_finite() {
                e[i] = 1.0;
                lo[i] = self.solve_linear(&e).ok()?.1;
            }
            if !hi[i].is_finite() {
                e[i] = -1.0;
                hi[i] = -self.solve_linear(&e).ok()?.1;
            }
        }
        Some((lo, hi))
    }

    pub fn is_bounded(&self) -> bool {
        self.bounding_box().is_some()
    }

    /// Rejection sample from the bounding box.
    pub fn sample<R: Rng>(&self, rng: &mut R, max_tries: usize) -> Option<Vec<f64>> {
        let (lo, hi) = self.bounding_box()?;
        for _ in 0..max_tries {
            let x: Vec<f64> = lo
                .iter()
                .zip(&hi)
                .map(|(&a, &b)| if a == b { a } else { rng.gen_range(a..=b) })
                .collect();
            if self.contains(&x, 0.0) {
                return Some(x);
            }
        }
        None
    }

    /// Tangent cone at `x`; constraints within `tol` of equality are active.
    pub fn tangent_cone(&self, x: &[f64], tol: f64) -> TangentCone {
        TangentCone {
            rows: self
                .rows
                .iter()
                .filter(|r| dot(&r.a, x) >= r.d - tol * (1.0 + r.d.abs()))
                .map(|r| r.a.clone())
                .collect(),
            at_lower: (0..self.dim)
                .map(|i| x[i] <= self.lower[i] + tol * (1.0 + self.lower[i].abs()))
                .collect(),
            at_upper: (0..self.dim)
                .map(|i| x[i] >= self.upper[i] - tol * (1.0 + self.upper[i].abs()))
                .collect(),
        }
    }

    /// Euclidean-nearest point is not needed; this clamps to the bounds only.
    pub fn clamp_to_bounds(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &xi)| xi.clamp(self.lower[i], self.upper[i]))
            .collect()
    }

    /// Appends one variable with the given bounds.
    pub fn extend(&self, lower: f64, upper: f64) -> Result<Self> {
        let mut lo = self.lower.clone();
        let mut hi = self.upper.clone();
        lo.push(lower);
        hi.push(upper);
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut a = r.a.clone();
                a.push(0.0);
                LinearInequality { a, d: r.d }
            })
            .collect();
        Self::new(self.dim + 1, rows, lo, hi)
    }

    /// Point of the set closest in the sup norm to the bounding-box centre.
    pub fn center(&self) -> Option<Vec<f64>> {
        let (lo, hi) = self.bounding_box()?;
        let c: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        if self.contains(&c, 0.0) {
            return Some(c);
        }
        // min r s.t. |x - c|_inf <= r, x in set.
        let n = self.dim;
        let mut lp = LinearProgram::new(n + 1);
        self.add_to_lp(&mut lp);
        lp.set_bounds(n, 0.0, f64::INFINITY);
        lp.set_cost(n, 1.0);
        for i in 0..n {
            let mut row = vec![0.0; n + 1];
            row[i] = 1.0;
            row[n] = -1.0;
            lp.add_row(row.clone(), Sense::Le, c[i]);
            row[i] = -1.0;
            lp.add_row(row, Sense::Le, -c[i]);
        }
        lp.solve().ok().map(|s| s.x[..n].to_vec())
    }
}

/// Result of rewriting a closed term into open form:
/// `psi * 1(f >= 0) = psi - psi * 1(-f > 0)`.
#[derive(Clone, Debug)]
pub struct ClosedRewrite {
    pub constant_part: FunctionHandle,
    /// Multiplier `psi`, inner `-f`; enters with [`ClosedRewrite::coefficient`].
    pub open_term: HeavisideTerm,
    pub coefficient: f64,
}

impl ClosedRewrite {
    /// The open term with the coefficient folded into its multiplier.
    pub fn signed_term(&self) -> HeavisideTerm {
        HeavisideTerm::open(
            self.open_term.multiplier.scale(self.coefficient),
            self.open_term.inner.clone(),
        )
    }
}

pub fn rewrite_closed(term: &HeavisideTerm) -> Result<ClosedRewrite> {
    if term.flavor != Flavor::Closed {
        return Err(Error::InvalidModel("only closed terms are rewritten".into()));
    }
    Ok(ClosedRewrite {
        constant_part: term.multiplier.clone(),
        open_term: HeavisideTerm::open(term.multiplier.clone(), term.inner.neg()),
        coefficient: -1.0,
    })
}

/// Canonical problem: minimize `cost + sum_k phi_k 1(g_k > 0)` over the set,
/// subject to `sum_l phi_l 1(h_l > 0) <= budget`. All stored terms are open.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    dim: usize,
    pub base_cost: FunctionHandle,
    pub objective_terms: Vec<HeavisideTerm>,
    pub constraint_terms: Vec<HeavisideTerm>,
    pub budget: f64,
    pub feasible_set: PolyhedralSet,
}

impl ProblemSpec {
    /// Validates and canonicalizes. Closed objective terms move their
    /// multiplier into the cost; closed constraint terms need a constant
    /// multiplier, which moves into the budget.
    pub fn new(
        base_cost: FunctionHandle,
        objective_terms: Vec<HeavisideTerm>,
        constraint_terms: Vec<HeavisideTerm>,
        budget: Option<f64>,
        feasible_set: PolyhedralSet,
    ) -> Result<Self> {
        let dim = feasible_set.dim();
        check_dim(dim, base_cost.dim())?;
        for t in objective_terms.iter().chain(&constraint_terms) {
            check_dim(dim, t.multiplier.dim())?;
            check_dim(dim, t.inner.dim())?;
        }
        let mut budget = match (budget, constraint_terms.is_empty()) {
            (Some(b), _) if !b.is_finite() => {
                return Err(Error::InvalidModel(format!("budget {b} is not finite")))
            }
            (Some(b), _) => b,
            (None, true) => 0.0,
            (None, false) => {
                return Err(Error::InvalidModel("constraint terms need a budget".into()))
            }
        };
        let mut cost = base_cost;
        let mut obj = Vec::with_capacity(objective_terms.len());
        for t in objective_terms {
            if t.flavor == Flavor::Closed {
                let r = rewrite_closed(&t)?;
                cost = cost.add(&r.constant_part);
                obj.push(r.signed_term());
            } else {
                obj.push(t);
            }
        }
        let mut con = Vec::with_capacity(constraint_terms.len());
        for t in constraint_terms {
            if t.flavor == Flavor::Closed {
                let Some(c) = t.multiplier.constant_value() else {
                    return Err(Error::InvalidModel(
                        "closed constraint terms need a constant multiplier".into(),
                    ));
                };
                let r = rewrite_closed(&t)?;
                budget -= c;
                con.push(r.signed_term());
            } else {
                con.push(t);
            }
        }
        Ok(ProblemSpec {
            dim,
            base_cost: cost,
            objective_terms: obj,
            constraint_terms: con,
            budget,
            feasible_set,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_objective(&self) -> usize {
        self.objective_terms.len()
    }

    pub fn n_constraint(&self) -> usize {
        self.constraint_terms.len()
    }

    pub fn has_functional_constraint(&self) -> bool {
        !self.constraint_terms.is_empty()
    }

    /// Objective value.
    pub fn phi(&self, x: &[f64]) -> f64 {
        self.base_cost.eval(x) + self.objective_terms.iter().map(|t| t.eval(x)).sum::<f64>()
    }

    /// Left-hand side of the functional constraint.
    pub fn functional(&self, x: &[f64]) -> f64 {
        self.constraint_terms.iter().map(|t| t.eval(x)).sum()
    }

    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        self.feasible_set.contains(x, tol) && self.functional(x) <= self.budget + tol
    }

    /// Every inner function, objective terms first.
    pub fn inner_functions(&self) -> impl Iterator<Item = &FunctionHandle> {
        self.objective_terms
            .iter()
            .chain(&self.constraint_terms)
            .map(|t| &t.inner)
    }
}

// ---------------------------------------------------------------------------
// Builders

/// `sum_i w_i |x_i|_0` as open terms `w_i 1(x_i > 0) + w_i 1(-x_i > 0)`.
pub fn build_l0(weights: &[f64]) -> Result<Vec<HeavisideTerm>> {
    let n = weights.len();
    let mut out = Vec::new();
    for (i, &w) in weights.iter().enumerate() {
        if !(w >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "l0 weight {w} for x{} must be nonnegative",
                i + 1
            )));
        }
        if w == 0.0 {
            continue;
        }
        let c = FunctionHandle::constant(w, n);
        let xi = FunctionHandle::var(i, n);
        out.push(HeavisideTerm::open(c.clone(), xi.clone()));
        out.push(HeavisideTerm::open(c, xi.neg()));
    }
    Ok(out)
}

/// Which boundary values the middle piece owns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Boundary {
    /// Middle piece on `a <= f <= b`.
    ClosedMiddle,
    /// Middle piece on `a <= f < b`; the upper piece owns `f = b`.
    ClosedRight,
}

/// `psi1` on the middle interval of `f`, `psi2` below `a`, `psi3` above `b`.
#[derive(Clone, Debug)]
pub struct ThreePiece {
    pub pieces: [FunctionHandle; 3],
    pub f: FunctionHandle,
    pub a: f64,
    pub b: f64,
    pub boundary: Boundary,
}

/// Expansion of a piecewise function into a base part plus open terms.
#[derive(Clone, Debug)]
pub struct PiecewiseExpansion {
    pub constant: FunctionHandle,
    pub terms: Vec<HeavisideTerm>,
}

impl PiecewiseExpansion {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant.eval(x) + self.terms.iter().map(|t| t.eval(x)).sum::<f64>()
    }
}

impl ThreePiece {
    /// Case-by-case value.
    pub fn reference_value(&self, x: &[f64]) -> f64 {
        let f = self.f.eval(x);
        let [p1, p2, p3] = &self.pieces;
        let below = f < self.a;
        let above = match self.boundary {
            Boundary::ClosedMiddle => f > self.b,
            Boundary::ClosedRight => f >= self.b,
        };
        if below {
            p2.eval(x)
        } else if above {
            p3.eval(x)
        } else {
            p1.eval(x)
        }
    }

    pub fn expand(&self) -> Result<PiecewiseExpansion> {
        build_piecewise_region(&self.pieces, &self.f, self.a, self.b, self.boundary)
    }
}

/// Expands a three-piece function into open Heaviside terms. Infinite `a`
/// or `b` drop the corresponding region.
pub fn build_piecewise_region(
    pieces: &[FunctionHandle; 3],
    f: &FunctionHandle,
    a: f64,
    b: f64,
    boundary: Boundary,
) -> Result<PiecewiseExpansion> {
    if !(a < b) || a == f64::INFINITY || b == f64::NEG_INFINITY {
        return Err(Error::InvalidModel(format!("need a < b, got a = {a}, b = {b}")));
    }
    let n = f.dim();
    let [p1, p2, p3] = pieces;
    let a_fin = a.is_finite();
    let b_fin = b.is_finite();
    let a_minus_f = FunctionHandle::constant(a, n).sub(f);
    let f_minus_b = f.sub(&FunctionHandle::constant(b, n));
    let b_minus_f = f_minus_b.neg();
    let mut terms = Vec::new();
    let constant = match boundary {
        Boundary::ClosedMiddle => {
            let outside = match (a_fin, b_fin) {
                (true, true) => Some(f_minus_b.max(&a_minus_f)),
                (true, false) => Some(a_minus_f.clone()),
                (false, true) => Some(f_minus_b.clone()),
                (false, false) => None,
            };
            if let Some(o) = outside {
                terms.push(HeavisideTerm::open(p1.neg(), o));
            }
            if a_fin {
                terms.push(HeavisideTerm::open(p2.clone(), a_minus_f));
            }
            if b_fin {
                terms.push(HeavisideTerm::open(p3.clone(), f_minus_b));
            }
            p1.clone()
        }
        Boundary::ClosedRight => {
            if !b_fin {
                if a_fin {
                    terms.push(HeavisideTerm::open(p2.sub(p1), a_minus_f));
                }
                p1.clone()
            } else {
                terms.push(HeavisideTerm::open(p1.sub(p3), b_minus_f));
                if a_fin {
                    terms.push(HeavisideTerm::open(p2.sub(p1), a_minus_f));
                }
                p3.clone()
            }
        }
    };
    Ok(PiecewiseExpansion { constant, terms })
}

/// `multiplier * 1(f ? 0) * 1(g ? 0)` as a sum of single-indicator terms.
pub fn build_indicator_product(
    f: &FunctionHandle,
    g: &FunctionHandle,
    flavors: (Flavor, Flavor),
    multiplier: &FunctionHandle,
) -> Vec<HeavisideTerm> {
    match flavors {
        (Flavor::Closed, Flavor::Closed) => vec![HeavisideTerm::closed(multiplier.clone(), f.min(g))],
        (Flavor::Open, Flavor::Open) => vec![HeavisideTerm::open(multiplier.clone(), f.min(g))],
        (Flavor::Closed, Flavor::Open) => vec![
            HeavisideTerm::open(multiplier.clone(), g.clone()),
            HeavisideTerm::open(multiplier.neg(), f.neg().min(g)),
        ],
        (Flavor::Open, Flavor::Closed) => build_indicator_product(g, f, (Flavor::Closed, Flavor::Open), multiplier),
    }
}

/// `psi * 1(a <= f < b) = psi 1(b - f > 0) - psi 1(a - f > 0)`.
pub fn build_middle_indicator(psi: &FunctionHandle, f: &FunctionHandle, a: f64, b: f64) -> Vec<HeavisideTerm> {
    let n = f.dim();
    vec![
        HeavisideTerm::open(psi.clone(), FunctionHandle::constant(b, n).sub(f)),
        HeavisideTerm::open(psi.neg(), FunctionHandle::constant(a, n).sub(f)),
    ]
}

/// On-off switch `multiplier * 1(y f(x) >= 0)` with a new variable `y` in `[0, 1]`
/// appended after `x`.
#[derive(Clone, Debug)]
pub struct OnOffTerm {
    pub term: HeavisideTerm,
    pub extended_set: PolyhedralSet,
}

pub fn build_onoff(f: &FunctionHandle, multiplier: &FunctionHandle, set: &PolyhedralSet) -> Result<OnOffTerm> {
    let n = f.dim();
    check_dim(set.dim(), n)?;
    let fe = f
        .expr()
        .ok_or_else(|| Error::NotStructured("on-off switch needs an expression".into()))?;
    let inner = FunctionHandle::from_expr(Expr::Var(n) * fe.clone(), n + 1)?;
    Ok(OnOffTerm {
        term: HeavisideTerm::closed(multiplier.embed(n + 1), inner),
        extended_set: set.extend(0.0, 1.0)?,
    })
}

/// Misclassification indicator `multiplier * 1(margin - sigma f > 0)`.
pub fn build_sign_classification(
    f: &FunctionHandle,
    sigma: f64,
    margin: f64,
    multiplier: &FunctionHandle,
) -> Result<HeavisideTerm> {
    if sigma != 1.0 && sigma != -1.0 {
        return Err(Error::InvalidModel(format!("label {sigma} must be +1 or -1")));
    }
    if !(margin >= 0.0) {
        return Err(Error::InvalidModel(format!("margin {margin} must be nonnegative")));
    }
    let inner = FunctionHandle::constant(margin, f.dim()).sub(&f.scale(sigma));
    Ok(HeavisideTerm::open(multiplier.clone(), inner))
}

/// Violation counts `sum_k c_k 1(f_k > 0)` for soft constraints `f_k <= 0`.
pub fn build_constraint_selection(fs: &[FunctionHandle], costs: &[f64]) -> Result<Vec<HeavisideTerm>> {
    if fs.len() != costs.len() {
        return Err(Error::InvalidModel("one cost per constraint".into()));
    }
    Ok(fs
        .iter()
        .zip(costs)
        .map(|(f, &c)| HeavisideTerm::open(FunctionHandle::constant(c, f.dim()), f.clone()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h(src: &str, n: usize) -> FunctionHandle {
        FunctionHandle::parse(src, n).unwrap()
    }

    fn unit_box(n: usize) -> PolyhedralSet {
        PolyhedralSet::boxed(vec![-1.0; n], vec![1.0; n]).unwrap()
    }

    #[test]
    fn closed_term_rewrite() {
        let t = HeavisideTerm::closed(h("1", 1), h("x1", 1));
        let p = ProblemSpec::new(h("0", 1), vec![t], vec![], None, unit_box(1)).unwrap();
        assert_eq!(p.base_cost.eval(&[0.3]), 1.0);
        let term = &p.objective_terms[0];
        assert_eq!(term.flavor, Flavor::Open);
        assert_eq!(term.multiplier.eval(&[0.3]), -1.0);
        assert_eq!(term.inner.eval(&[0.3]), -0.3);
        for x in [-1.0, -0.5, 0.0, 0.5] {
            assert_eq!(p.phi(&[x]), heaviside_closed(x));
        }
        let r = rewrite_closed(&HeavisideTerm::closed(h("2", 1), h("x1", 1))).unwrap();
        assert_eq!(r.coefficient, -1.0);
    }

    #[test]
    fn l0_builder() {
        let terms = build_l0(&[1.0, 0.0]).unwrap();
        assert_eq!(terms.len(), 2);
        let s = |x: &[f64]| terms.iter().map(|t| t.eval(x)).sum::<f64>();
        assert_eq!(s(&[0.0, 5.0]), 0.0);
        assert_eq!(s(&[0.2, 5.0]), 1.0);
        assert_eq!(s(&[-0.2, 0.0]), 1.0);
        assert!(matches!(build_l0(&[-1.0]), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn empty_set_rejected() {
        let rows = vec![
            LinearInequality { a: vec![1.0], d: -2.0 },
        ];
        assert!(PolyhedralSet::new(1, rows, vec![-1.0], vec![1.0]).is_err());
    }

    #[test]
    fn closed_middle_with_one_sided_region() {
        let tp = ThreePiece {
            pieces: [h("1", 1), h("2", 1), h("3", 1)],
            f: h("x1", 1),
            a: f64::NEG_INFINITY,
            b: 1.0,
            boundary: Boundary::ClosedMiddle,
        };
        let e = tp.expand().unwrap();
        assert!(e.terms.iter().all(|t| t.multiplier.eval(&[0.0]) != 2.0));
        for x in [-5.0, 0.0, 1.0, 1.5] {
            assert_eq!(e.eval(&[x]), tp.reference_value(&[x]));
        }
    }

    #[test]
    fn onoff_switch() {
        let set = unit_box(1);
        let o = build_onoff(&h("x1 - 0.5", 1), &h("1", 1), &set).unwrap();
        assert_eq!(o.extended_set.dim(), 2);
        assert_eq!(o.term.eval(&[0.0, 0.0]), 1.0);
        assert_eq!(o.term.eval(&[0.0, 1.0]), 0.0);
        assert_eq!(o.term.eval(&[0.9, 1.0]), 1.0);
    }

    #[test]
    fn sign_classification_margin() {
        let t = build_sign_classification(&h("x1", 1), 1.0, 0.1, &h("1", 1)).unwrap();
        assert_eq!(t.eval(&[0.05]), 1.0);
        assert_eq!(t.eval(&[0.2]), 0.0);
        let t0 = build_sign_classification(&h("x1", 1), -1.0, 0.0, &h("1", 1)).unwrap();
        assert_eq!(t0.eval(&[0.05]), 1.0);
        assert_eq!(t0.eval(&[0.0]), 0.0);
    }

    fn three_piece(a: f64, b: f64, boundary: Boundary) -> ThreePiece {
        ThreePiece {
            pieces: [h("x1 + 1", 1), h("x1^2 - 2", 1), h("3 - x1", 1)],
            f: h("x1", 1),
            a,
            b,
            boundary,
        }
    }

    proptest! {
        #[test]
        fn three_piece_expansion_matches_cases(
            a in -1.0f64..0.5, w in 0.1f64..1.0, closed_right in any::<bool>(),
            x in prop_oneof![-2.0f64..2.0, Just(0.0)], snap in 0usize..3,
        ) {
            let b = a + w;
            let bd = if closed_right { Boundary::ClosedRight } else { Boundary::ClosedMiddle };
            let tp = three_piece(a, b, bd);
            let x = [a, b, x][snap];
            let e = tp.expand().unwrap();
            prop_assert!((e.eval(&[x]) - tp.reference_value(&[x])).abs() < 1e-12);
        }

        #[test]
        fn indicator_products(fl in 0usize..4, x in prop_oneof![-1.0f64..1.0, Just(0.0)], y in prop_oneof![-1.0f64..1.0, Just(0.0)]) {
            let flavors = [
                (Flavor::Open, Flavor::Open),
                (Flavor::Open, Flavor::Closed),
                (Flavor::Closed, Flavor::Open),
                (Flavor::Closed, Flavor::Closed),
            ][fl];
            let f = h("x1", 2);
            let g = h("x2", 2);
            let terms = build_indicator_product(&f, &g, flavors, &h("2", 2));
            let ind = |fl: Flavor, s: f64| if fl == Flavor::Open { heaviside_open(s) } else { heaviside_closed(s) };
            let want = 2.0 * ind(flavors.0, x) * ind(flavors.1, y);
            let got: f64 = terms.iter().map(|t| t.eval(&[x, y])).sum();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn canonicalization_preserves_objective(
            x in prop_oneof![-1.0f64..1.0, Just(0.0), Just(0.25)],
            c in -2.0f64..2.0,
        ) {
            let raw = vec![
                HeavisideTerm::closed(h(&format!("x1 + ({c})"), 1), h("x1", 1)),
                HeavisideTerm::open(h("2", 1), h("x1 - 0.25", 1)),
                HeavisideTerm::closed(h("1", 1), h("0.25 - x1", 1)),
            ];
            let cost = h("x1^2", 1);
            let direct = cost.eval(&[x]) + raw.iter().map(|t| t.eval(&[x])).sum::<f64>();
            let p = ProblemSpec::new(cost, raw, vec![], None, unit_box(1)).unwrap();
            prop_assert!(p.objective_terms.iter().all(|t| t.flavor == Flavor::Open));
            prop_assert!((p.phi(&[x]) - direct).abs() < 1e-12);
        }

        #[test]
        fn middle_indicator(x in prop_oneof![-2.0f64..2.0, Just(0.0), Just(1.0)]) {
            let terms = build_middle_indicator(&h("3", 1), &h("x1", 1), 0.0, 1.0);
            let got: f64 = terms.iter().map(|t| t.eval(&[x])).sum();
            let want = if (0.0..1.0).contains(&x) { 3.0 } else { 0.0 };
            prop_assert_eq!(got, want);
        }
    }
}
