//! Parametric approximations of the open Heaviside function and of `|t|_0`.
//!
//! A family maps `(t, delta)` to `[0, 1]`. Heaviside families vanish for
//! `t <= -lower_end(delta)` and equal one for `t >= upper_end(delta)`, exactly.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::functions::{expr, fd_dir_derivative_oracle, FunctionHandle, PlForm, EPS_ACT};

/// Decreasing grid used for limit checks.
pub const DELTA_GRID: [f64; 8] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];
/// Final-value threshold for limit checks on [`DELTA_GRID`].
pub const LIMIT_TOL: f64 = 1e-3;
/// Number of trailing grid points on which a limit sequence must be monotone.
const TAIL: usize = 4;

/// A scalar function of `delta`.
#[derive(Clone)]
pub struct DeltaFn {
    f: FunctionHandle,
    src: String,
}

impl fmt::Debug for DeltaFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DeltaFn({})", self.src)
    }
}

impl DeltaFn {
    /// Parses an expression in the variable `delta`.
    pub fn parse(src: &str) -> Result<Self> {
        let e = expr::parse_with(src, &|n: &str| (n == "delta").then_some(0))?;
        Ok(DeltaFn {
            f: FunctionHandle::from_expr(e, 1)?,
            src: src.to_string(),
        })
    }

    /// `c * delta^p`.
    pub fn power(c: f64, p: f64) -> Self {
        Self::parse(&format!("{c} * pow(delta, {p})")).expect("valid expression")
    }

    pub fn eval(&self, delta: f64) -> f64 {
        self.f.eval(&[delta])
    }

    pub fn source(&self) -> &str {
        &self.src
    }
}

/// What the family approximates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Target {
    /// `1(t > 0)`.
    Heaviside,
    /// `|t|_0 = 1(t > 0) + 1(-t > 0)`.
    L0,
}

impl Target {
    pub fn value(self, t: f64) -> f64 {
        match self {
            Target::Heaviside => (t > 0.0) as u8 as f64,
            Target::L0 => (t != 0.0) as u8 as f64,
        }
    }
}

/// User-supplied family; used for test doubles and experiments.
pub trait ApproxKernel: Send + Sync {
    fn value(&self, t: f64, delta: f64) -> f64;
    /// One-sided derivative `theta'(t; dir)` for `dir = +1` or `-1`.
    fn dd(&self, t: f64, delta: f64, dir: f64) -> f64;
    fn lower_end(&self, delta: f64) -> f64;
    fn upper_end(&self, delta: f64) -> f64;
}

enum Kind {
    TruncatedHinge,
    Truncation {
        psi: FunctionHandle,
        q: DeltaFn,
        m: DeltaFn,
    },
    Nonifier {
        breaks: Vec<DeltaFn>,
        heights: Vec<DeltaFn>,
    },
    Scaled {
        inner: ApproxFamily,
        m: DeltaFn,
    },
    L0Sum {
        plus: ApproxFamily,
        minus: ApproxFamily,
    },
    Custom(Arc<dyn ApproxKernel>),
}

/// A tagged approximation family.
#[derive(Clone)]
pub struct ApproxFamily {
    kind: Arc<Kind>,
    tag: String,
    target: Target,
}

impl fmt::Debug for ApproxFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ApproxFamily({})", self.tag)
    }
}

#[derive(Clone, Copy, Debug)]
pub enum SteklovKind {
    /// Density `1/delta` on `[-delta/2, delta/2]`.
    Symmetric,
}

fn clamp01(s: f64) -> f64 {
    s.clamp(0.0, 1.0)
}

/// Derivative of `min(max(s, 0), 1)` at `s` in direction `d`. Exact
/// comparisons, matching `clamp01`; callers snap support ends beforehand.
fn trunc_dd(s: f64, d: f64) -> f64 {
    if !(0.0..=1.0).contains(&s) {
        0.0
    } else if s == 0.0 {
        d.max(0.0)
    } else if s == 1.0 {
        d.min(0.0)
    } else {
        d
    }
}

fn check_limit(name: &str, f: &dyn Fn(f64) -> f64) -> Result<()> {
    let seq: Vec<f64> = DELTA_GRID.iter().map(|&d| f(d)).collect();
    let last = *seq.last().unwrap();
    if !(last.abs() <= LIMIT_TOL) {
        return Err(Error::InvalidFamily(format!(
            "{name} must vanish as delta -> 0 (value {last} at delta = 1e-8)"
        )));
    }
    Ok(())
}

impl ApproxFamily {
    fn new(kind: Kind, tag: impl Into<String>, target: Target) -> Self {
        ApproxFamily {
            kind: Arc::new(kind),
            tag: tag.into(),
            target,
        }
    }

    /// `(max(t + delta, 0) - max(t - delta, 0)) / (2 delta)`. Equals 1/2 at the
    /// origin for every delta, so it does not converge to the open Heaviside.
    pub fn truncated_hinge() -> Self {
        Self::new(Kind::TruncatedHinge, "truncated-hinge", Target::Heaviside)
    }

    /// `min(max(t / (delta + sqrt(delta)) + sqrt(delta) / (1 + sqrt(delta)), 0), 1)`.
    pub fn modified_hinge() -> Self {
        let psi = FunctionHandle::parse("x1", 1).expect("identity");
        let q = DeltaFn::parse("sqrt(delta) / (1 + sqrt(delta))").expect("valid");
        let m = DeltaFn::parse("delta + sqrt(delta)").expect("valid");
        let mut f = make_truncation_family(psi, q, m).expect("modified hinge is valid");
        f.tag = "modified-hinge".into();
        f
    }

    pub fn custom(tag: &str, target: Target, kernel: Arc<dyn ApproxKernel>) -> Self {
        Self::new(Kind::Custom(kernel), tag, target)
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn with_tag(mut self, tag: &str) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn target(&self) -> Target {
        self.target
    }

    /// `theta(t / m(delta), delta)`.
    pub fn scaled(&self, m: DeltaFn) -> Self {
        let tag = format!("{}-scaled", self.tag);
        Self::new(
            Kind::Scaled {
                inner: self.clone(),
                m,
            },
            tag,
            self.target,
        )
    }

    /// `plus(t) + minus(-t)`, approximating `|t|_0`.
    pub fn l0_sum(plus: &ApproxFamily, minus: &ApproxFamily) -> Result<Self> {
        if plus.target != Target::Heaviside || minus.target != Target::Heaviside {
            return Err(Error::InvalidFamily("l0 sums combine Heaviside families".into()));
        }
        let tag = format!("l0({},{})", plus.tag, minus.tag);
        Ok(Self::new(
            Kind::L0Sum {
                plus: plus.clone(),
                minus: minus.clone(),
            },
            tag,
            Target::L0,
        ))
    }

    /// Magnitude of the left support end: the family is fully "off" left of `-lower_end`.
    pub fn lower_end(&self, delta: f64) -> f64 {
        match &*self.kind {
            Kind::TruncatedHinge => delta,
            Kind::Truncation { q, m, .. } => m.eval(delta) * q.eval(delta),
            Kind::Nonifier { breaks, .. } => -breaks[0].eval(delta),
            Kind::Scaled { inner, m } => m.eval(delta) * inner.lower_end(delta),
            Kind::L0Sum { plus, minus } => plus.lower_end(delta).max(minus.upper_end(delta)),
            Kind::Custom(k) => k.lower_end(delta),
        }
    }

    pub fn upper_end(&self, delta: f64) -> f64 {
        match &*self.kind {
            Kind::TruncatedHinge => delta,
            Kind::Truncation { q, m, .. } => m.eval(delta) * (1.0 - q.eval(delta)),
            Kind::Nonifier { breaks, .. } => breaks.last().unwrap().eval(delta),
            Kind::Scaled { inner, m } => m.eval(delta) * inner.upper_end(delta),
            Kind::L0Sum { plus, minus } => plus.upper_end(delta).max(minus.lower_end(delta)),
            Kind::Custom(k) => k.upper_end(delta),
        }
    }

    pub fn value(&self, t: f64, delta: f64) -> f64 {
        match &*self.kind {
            Kind::L0Sum { plus, minus } => plus.value(t, delta) + minus.value(-t, delta),
            Kind::Custom(k) => k.value(t, delta),
            Kind::Scaled { inner, m } => inner.value(t / m.eval(delta), delta),
            kind => {
                if t <= -self.lower_end(delta) {
                    return 0.0;
                }
                if t >= self.upper_end(delta) {
                    return 1.0;
                }
                match kind {
                    Kind::TruncatedHinge => clamp01((t + delta) / (2.0 * delta)),
                    Kind::Truncation { psi, q, m } => {
                        clamp01(psi.eval(&[q.eval(delta) + t / m.eval(delta)]))
                    }
                    Kind::Nonifier { breaks, heights } => {
                        let b: Vec<f64> = breaks.iter().map(|f| f.eval(delta)).collect();
                        let mut acc = 0.0;
                        for (i, h) in heights.iter().enumerate() {
                            let w = (t - b[i]).clamp(0.0, b[i + 1] - b[i]);
                            acc += h.eval(delta) * w;
                        }
                        clamp01(acc)
                    }
                    _ => unreachable!(),
                }
            }
        }
    }

    /// One-sided derivative `theta'(t; dir)`, `dir` in `{+1, -1}`.
    ///
    /// Points within a tolerance relative to a support end or breakpoint are
    /// treated as sitting on it.
    pub fn dd(&self, t: f64, delta: f64, dir: f64) -> f64 {
        assert!(dir == 1.0 || dir == -1.0, "direction must be +1 or -1");
        match &*self.kind {
            Kind::L0Sum { plus, minus } => plus.dd(t, delta, dir) + minus.dd(-t, delta, -dir),
            Kind::Custom(k) => k.dd(t, delta, dir),
            Kind::Scaled { inner, m } => {
                let m = m.eval(delta);
                inner.dd(t / m, delta, dir) / m
            }
            kind => {
                let (lo, hi) = (self.lower_end(delta), self.upper_end(delta));
                let tie = |end: f64| EPS_ACT * end.abs();
                let (t, at_lo, at_hi) = if (t + lo).abs() <= tie(lo) {
                    (-lo, true, false)
                } else if (t - hi).abs() <= tie(hi) {
                    (hi, false, true)
                } else {
                    (t, false, false)
                };
                if t < -lo || t > hi {
                    return 0.0;
                }
                match kind {
                    Kind::TruncatedHinge => {
                        let s = if at_lo {
                            0.0
                        } else if at_hi {
                            1.0
                        } else {
                            (t + delta) / (2.0 * delta)
                        };
                        trunc_dd(s, dir / (2.0 * delta))
                    }
                    Kind::Truncation { psi, q, m } => {
                        let (q, m) = (q.eval(delta), m.eval(delta));
                        let u = if at_lo {
                            0.0
                        } else if at_hi {
                            1.0
                        } else {
                            q + t / m
                        };
                        let d = psi.dir_derivative(&[u], &[dir]).unwrap_or(f64::NAN) / m;
                        let s = if at_lo {
                            0.0
                        } else if at_hi {
                            1.0
                        } else {
                            psi.eval(&[u])
                        };
                        trunc_dd(s, d)
                    }
                    Kind::Nonifier { breaks, heights } => {
                        let b: Vec<f64> = breaks.iter().map(|f| f.eval(delta)).collect();
                        let h: Vec<f64> = heights.iter().map(|f| f.eval(delta)).collect();
                        let t = b
                            .iter()
                            .copied()
                            .find(|bi| (t - bi).abs() <= tie(*bi))
                            .unwrap_or(t);
                        // Density on the side of t that dir points to.
                        let cell = (0..h.len()).find(|&i| {
                            if dir > 0.0 {
                                t >= b[i] && t < b[i + 1]
                            } else {
                                t > b[i] && t <= b[i + 1]
                            }
                        });
                        cell.map_or(0.0, |i| dir * h[i])
                    }
                    _ => unreachable!(),
                }
            }
        }
    }

    /// Directional derivative of `theta(g(x), delta)` given `g(x) = t` and the
    /// form of `g'(x; .)`.
    pub fn compose_form(&self, t: f64, delta: f64, inner: &PlForm) -> PlForm {
        let up = self.dd(t, delta, 1.0);
        let down = -self.dd(t, delta, -1.0);
        let (a, b) = (inner.scale(up), inner.scale(down));
        if up >= down {
            a.max(&b)
        } else {
            a.min(&b)
        }
    }
}

/// `theta(t, delta) = T(psi(q(delta) + t / m(delta)))` with `T` the truncation
/// to `[0, 1]`. Requires `psi` nondecreasing with `psi(0) = 0`, `psi(1) = 1`,
/// `q` in `[0, 1]`, `m > 0`, and both `q` and `m` vanishing as `delta -> 0`.
pub fn make_truncation_family(psi: FunctionHandle, q: DeltaFn, m: DeltaFn) -> Result<ApproxFamily> {
    if psi.dim() != 1 {
        return Err(Error::InvalidFamily("psi must be univariate".into()));
    }
    if psi.eval(&[0.0]).abs() > 1e-12 || (psi.eval(&[1.0]) - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidFamily("psi must satisfy psi(0) = 0 and psi(1) = 1".into()));
    }
    let us: Vec<f64> = (0..=300).map(|i| -1.0 + 3.0 * i as f64 / 300.0).collect();
    if us.windows(2).any(|w| psi.eval(&[w[1]]) < psi.eval(&[w[0]]) - 1e-12) {
        return Err(Error::InvalidFamily("psi must be nondecreasing".into()));
    }
    for &d in &DELTA_GRID {
        let (qd, md) = (q.eval(d), m.eval(d));
        if !(0.0..=1.0).contains(&qd) || !(md > 0.0) {
            return Err(Error::InvalidFamily(format!(
                "need 0 <= q <= 1 and m > 0 (q = {qd}, m = {md} at delta = {d})"
            )));
        }
    }
    check_limit("q", &|d| q.eval(d))?;
    check_limit("m", &|d| m.eval(d))?;
    Ok(ApproxFamily::new(Kind::Truncation { psi, q, m }, "truncation", Target::Heaviside))
}

/// Cumulative distribution of a piecewise-constant density with cell
/// boundaries `breaks` and cell heights `heights`, both functions of `delta`.
pub fn make_nonifier(breaks: Vec<DeltaFn>, heights: Vec<DeltaFn>) -> Result<ApproxFamily> {
    if breaks.len() < 2 || heights.len() + 1 != breaks.len() {
        return Err(Error::InvalidFamily("need one height per cell".into()));
    }
    for &d in &DELTA_GRID {
        let b: Vec<f64> = breaks.iter().map(|f| f.eval(d)).collect();
        let h: Vec<f64> = heights.iter().map(|f| f.eval(d)).collect();
        if b.windows(2).any(|w| !(w[0] < w[1])) || b[0] > 0.0 || *b.last().unwrap() < 0.0 {
            return Err(Error::InvalidFamily(format!("breakpoints must increase and bracket 0 at delta = {d}")));
        }
        if h.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidFamily("density must be nonnegative".into()));
        }
        let mass: f64 = h.iter().zip(b.windows(2)).map(|(h, w)| h * (w[1] - w[0])).sum();
        if (mass - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidFamily(format!("density integrates to {mass} at delta = {d}")));
        }
    }
    check_limit("left support end", &|d| breaks[0].eval(d))?;
    check_limit("right support end", &|d| breaks.last().unwrap().eval(d))?;
    Ok(ApproxFamily::new(Kind::Nonifier { breaks, heights }, "nonifier", Target::Heaviside))
}

/// Uniform density `1/(lower + upper)` on `[-lower, upper]`. Requires
/// `lower/upper -> 0` so that the CDF vanishes at the origin in the limit.
pub fn make_asymmetric_steklov(lower: DeltaFn, upper: DeltaFn) -> Result<ApproxFamily> {
    for &d in &DELTA_GRID {
        if !(lower.eval(d) > 0.0 && upper.eval(d) > 0.0) {
            return Err(Error::InvalidFamily(format!("support ends must be positive at delta = {d}")));
        }
    }
    check_limit("lower/upper", &|d| lower.eval(d) / upper.eval(d))?;
    let neg = DeltaFn::parse(&format!("-({})", lower.source()))?;
    let height = DeltaFn::parse(&format!("1 / (({}) + ({}))", lower.source(), upper.source()))?;
    Ok(make_nonifier(vec![neg, upper], vec![height])?.with_tag("asym-steklov"))
}

pub fn make_steklov_cdf(kind: SteklovKind) -> Result<ApproxFamily> {
    match kind {
        SteklovKind::Symmetric => Ok(make_nonifier(
            vec![DeltaFn::parse("-delta / 2")?, DeltaFn::parse("delta / 2")?],
            vec![DeltaFn::parse("1 / delta")?],
        )?
        .with_tag("steklov")),
    }
}

// ---------------------------------------------------------------------------
// Axiom suite

#[derive(Clone, Debug, Serialize)]
pub struct AxiomCheck {
    pub name: &'static str,
    pub passed: bool,
    pub details: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LimitRecord {
    pub t: f64,
    pub target: f64,
    /// Value at the smallest grid delta.
    pub limit: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AxiomReport {
    pub tag: String,
    pub target: Target,
    pub checks: Vec<AxiomCheck>,
    pub limits: Vec<LimitRecord>,
}

impl AxiomReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> &AxiomCheck {
        self.checks.iter().find(|c| c.name == name).expect("known axiom name")
    }
}

fn tail_nonincreasing(seq: &[f64]) -> bool {
    seq[seq.len() - TAIL..]
        .windows(2)
        .all(|w| w[1] <= w[0] + 1e-15 * (1.0 + w[0].abs()))
}

const SAMPLE_T: [f64; 7] = [-1.0, -0.1, -1e-3, 0.0, 1e-3, 0.1, 1.0];

/// Checks the approximation axioms on [`DELTA_GRID`]:
/// `A0` support ends vanish, `A1` pointwise convergence to the target,
/// `A2` exact support, `A3` one-sided monotonicity plus agreement of the
/// structural one-sided derivatives with finite differences.
pub fn axiom_suite(family: &ApproxFamily) -> AxiomReport {
    let target = family.target();
    let mut checks = Vec::new();

    let mut a0 = AxiomCheck { name: "A0", passed: true, details: vec![] };
    for (name, upper) in [("lower", false), ("upper", true)] {
        let seq: Vec<f64> = DELTA_GRID
            .iter()
            .map(|&d| if upper { family.upper_end(d) } else { family.lower_end(d) })
            .collect();
        let last = *seq.last().unwrap();
        if seq.iter().any(|&v| !(v >= 0.0)) || !tail_nonincreasing(&seq) || last > LIMIT_TOL {
            a0.passed = false;
            a0.details.push(format!("{name} end sequence {seq:?}"));
        }
    }
    checks.push(a0);

    let mut a1 = AxiomCheck { name: "A1", passed: true, details: vec![] };
    let mut limits = Vec::new();
    for &t in &SAMPLE_T {
        let goal = target.value(t);
        let seq: Vec<f64> = DELTA_GRID.iter().map(|&d| family.value(t, d)).collect();
        let err: Vec<f64> = seq.iter().map(|v| (v - goal).abs()).collect();
        let last = *seq.last().unwrap();
        if !tail_nonincreasing(&err) || *err.last().unwrap() > LIMIT_TOL {
            a1.passed = false;
            a1.details.push(format!("t = {t}: values {seq:?}, target {goal}"));
        }
        limits.push(LimitRecord { t, target: goal, limit: last });
    }
    checks.push(a1);

    let mut a2 = AxiomCheck { name: "A2", passed: true, details: vec![] };
    for &d in &DELTA_GRID {
        let (lo, hi) = (family.lower_end(d), family.upper_end(d));
        let w = lo + hi;
        let (left, right) = match target {
            Target::Heaviside => (0.0, 1.0),
            Target::L0 => (1.0, 1.0),
        };
        for t in [-lo, -lo - 1e-3 * w, -lo - w, -2.0 * lo - 1.0] {
            let v = family.value(t, d);
            if v != left {
                a2.passed = false;
                a2.details.push(format!("theta({t}, {d}) = {v}, expected exactly {left}"));
            }
        }
        for t in [hi, hi + 1e-3 * w, hi + w, 2.0 * hi + 1.0] {
            let v = family.value(t, d);
            if v != right {
                a2.passed = false;
                a2.details.push(format!("theta({t}, {d}) = {v}, expected exactly {right}"));
            }
        }
    }
    checks.push(a2);

    let mut a3 = AxiomCheck { name: "A3", passed: true, details: vec![] };
    for &d in &[1e-1, 1e-3, 1e-5, 1e-8] {
        let (lo, hi) = (family.lower_end(d), family.upper_end(d));
        let w = lo + hi;
        let mut ts = vec![-lo, hi, 0.0];
        ts.extend((1..10).map(|i| -lo + w * (i as f64 / 10.0 + 0.0123)));
        for t in ts {
            let (up, down) = (family.dd(t, d, 1.0), family.dd(t, d, -1.0));
            let ok = match target {
                Target::Heaviside => up >= 0.0 && down <= 0.0,
                Target::L0 => (t < 0.0 || up >= 0.0) && (t > 0.0 || down >= 0.0),
            };
            if !ok {
                a3.passed = false;
                a3.details.push(format!("monotonicity at t = {t}, delta = {d}: +{up}, -{down}"));
            }
            for (dir, got) in [(1.0, up), (-1.0, down)] {
                let f = |x: &[f64]| family.value(x[0], d);
                // Stay on one smooth piece: steps shorter than the gap to the next support end.
                let gap = [-lo, hi]
                    .iter()
                    .map(|c| (c - t) * dir)
                    .filter(|g| *g > 0.0)
                    .fold(w, f64::min);
                let steps: Vec<f64> = (0..4).map(|k| gap * 1e-4 / 2f64.powi(k)).collect();
                let fd = fd_dir_derivative_oracle(&f, &[t], &[dir], &steps);
                if (got - fd).abs() > 1e-5 * fd.abs().max(1.0) {
                    a3.passed = false;
                    a3.details.push(format!(
                        "derivative at t = {t}, delta = {d}, dir = {dir}: structural {got}, finite difference {fd}"
                    ));
                }
            }
        }
    }
    checks.push(a3);

    AxiomReport {
        tag: family.tag().to_string(),
        target,
        checks,
        limits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn truncated_hinge_oracle(t: f64, d: f64) -> f64 {
        ((t + d).max(0.0) - (t - d).max(0.0)) / (2.0 * d)
    }

    #[test]
    fn modified_hinge_passes_all_axioms() {
        let r = axiom_suite(&ApproxFamily::modified_hinge());
        assert!(r.all_passed(), "{:#?}", r.checks);
    }

    #[test]
    fn truncated_hinge_fails_pointwise_limit_at_zero() {
        let r = axiom_suite(&ApproxFamily::truncated_hinge());
        assert!(!r.check("A1").passed);
        let at0 = r.limits.iter().find(|l| l.t == 0.0).unwrap();
        assert_eq!(at0.limit, 0.5);
        assert!(r.check("A2").passed && r.check("A3").passed);
    }

    #[test]
    fn symmetric_steklov_is_the_truncated_hinge() {
        let s = make_steklov_cdf(SteklovKind::Symmetric).unwrap();
        for &d in &[0.3, 1e-2, 1e-5] {
            for i in 0..=40 {
                let t = -d + 2.0 * d * i as f64 / 40.0;
                assert!((s.value(t, d) - truncated_hinge_oracle(t, d / 2.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn asymmetric_steklov_passes() {
        let f = make_asymmetric_steklov(DeltaFn::power(1.0, 2.0), DeltaFn::power(1.0, 1.0)).unwrap();
        let r = axiom_suite(&f);
        assert!(r.all_passed(), "{:#?}", r.checks);
        // Derivative of the CDF is the density, signed by direction.
        let d = 0.1;
        assert!((f.dd(0.0, d, 1.0) - 1.0 / (d * d + d)).abs() < 1e-9);
        assert!((f.dd(0.0, d, -1.0) + 1.0 / (d * d + d)).abs() < 1e-9);
        assert_eq!(f.dd(d, d, 1.0), 0.0);
    }

    #[test]
    fn asymmetric_steklov_with_balanced_ends_is_rejected() {
        let e = make_asymmetric_steklov(DeltaFn::power(1.0, 1.0), DeltaFn::power(2.0, 1.0));
        assert!(matches!(e, Err(Error::InvalidFamily(_))));
    }

    #[test]
    fn truncation_family_validation() {
        let psi = FunctionHandle::parse("(x1 + x1^3) / 2", 1).unwrap();
        let ok = make_truncation_family(psi.clone(), DeltaFn::power(1.0, 1.0), DeltaFn::power(1.0, 0.5)).unwrap();
        let r = axiom_suite(&ok);
        assert!(r.all_passed(), "{:#?}", r.checks);
        let bad = make_truncation_family(psi.clone(), DeltaFn::parse("0.5").unwrap(), DeltaFn::power(1.0, 0.5));
        assert!(matches!(bad, Err(Error::InvalidFamily(_))));
        let not_mono = FunctionHandle::parse("x1^2", 1).unwrap();
        assert!(make_truncation_family(not_mono, DeltaFn::power(1.0, 1.0), DeltaFn::power(1.0, 0.5)).is_err());
        let shifted = FunctionHandle::parse("x1 + 0.1", 1).unwrap();
        assert!(make_truncation_family(shifted, DeltaFn::power(1.0, 1.0), DeltaFn::power(1.0, 0.5)).is_err());
    }

    #[test]
    fn scaling_preserves_axioms() {
        let f = ApproxFamily::modified_hinge().scaled(DeltaFn::parse("1 + delta").unwrap());
        assert!(axiom_suite(&f).all_passed());
    }

    #[test]
    fn l0_sum_passes_its_axioms() {
        let h = ApproxFamily::modified_hinge();
        let f = ApproxFamily::l0_sum(&h, &h).unwrap();
        let r = axiom_suite(&f);
        assert!(r.all_passed(), "{:#?}", r.checks);
        assert_eq!(f.value(0.0, 0.01), 2.0 * (0.1 / 1.1));
    }

    proptest! {
        #[test]
        fn values_stay_in_unit_interval(t in -2.0f64..2.0, e in 1.0f64..8.0, which in 0usize..4) {
            let d = 10f64.powf(-e);
            let fams = [
                ApproxFamily::modified_hinge(),
                ApproxFamily::truncated_hinge(),
                make_steklov_cdf(SteklovKind::Symmetric).unwrap(),
                make_asymmetric_steklov(DeltaFn::power(1.0, 2.0), DeltaFn::power(1.0, 1.0)).unwrap(),
            ];
            let v = fams[which].value(t * 10f64.powf(-e), d);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn cdf_truncation_is_idempotent(t in -1.0f64..1.0, e in 1.0f64..8.0) {
            let d = 10f64.powf(-e);
            let f = make_asymmetric_steklov(DeltaFn::power(1.0, 2.0), DeltaFn::power(1.0, 1.0)).unwrap();
            let v = f.value(t * d, d);
            prop_assert_eq!(v, clamp01(v));
        }

        #[test]
        fn composed_form_matches_scalar_rule(t in -0.2f64..0.2, s in -2.0f64..2.0) {
            let f = ApproxFamily::modified_hinge();
            let d = 0.05;
            let form = f.compose_form(t, d, &PlForm::linear(vec![1.0]));
            let want = if s >= 0.0 { s * f.dd(t, d, 1.0) } else { -s * f.dd(t, d, -1.0) };
            prop_assert!((form.eval(&[s]) - want).abs() < 1e-9);
        }
    }
}
