//! Function handles: evaluation, directional derivatives and structure.

pub mod expr;
pub mod plform;

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use expr::{Curvature, Expr};
pub use plform::PlForm;

use crate::error::{check_dim, Error, Result};
use crate::model::PolyhedralSet;

/// Tie tolerance for active pieces of min/max/abs.
pub const EPS_ACT: f64 = 1e-9;

/// Structural class of a handle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Structure {
    Smooth,
    /// Pointwise max of smooth pieces.
    MaxOfSmooth { pieces: usize },
    /// `max(convex pieces) - max(concave pieces)`, all pieces smooth.
    Dc { convex: usize, concave: usize },
    /// Min/max/abs composed with nonconstant products or smooth nonlinearities.
    /// Directional derivatives are still exact.
    Composite,
    /// Evaluation only.
    BlackBox,
}

type Closure = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Body {
    Expr {
        expr: Expr,
        structure: Structure,
        curvature: Curvature,
        piecewise_affine: bool,
    },
    BlackBox(Closure),
}

#[derive(Clone)]
struct Inner {
    dim: usize,
    body: Body,
    lipschitz_hint: Option<f64>,
}

/// Shared, cheaply clonable function of `dim` variables.
#[derive(Clone)]
pub struct FunctionHandle {
    inner: Arc<Inner>,
}

impl fmt::Debug for FunctionHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.inner.body {
            Body::Expr { expr, .. } => write!(f, "FunctionHandle({expr})"),
            Body::BlackBox(_) => write!(f, "FunctionHandle(<black box>)"),
        }
    }
}

impl fmt::Display for FunctionHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.inner.body {
            Body::Expr { expr, .. } => write!(f, "{expr}"),
            Body::BlackBox(_) => write!(f, "<black box>"),
        }
    }
}

fn classify(expr: &Expr) -> Structure {
    if expr.is_smooth() {
        return Structure::Smooth;
    }
    match expr.dc_split() {
        Some((p, q)) if q.len() == 1 && q[0] == Expr::Const(0.0) => {
            Structure::MaxOfSmooth { pieces: p.len() }
        }
        Some((p, q)) => Structure::Dc {
            convex: p.len(),
            concave: q.len(),
        },
        None => Structure::Composite,
    }
}

impl FunctionHandle {
    pub fn from_expr(expr: Expr, dim: usize) -> Result<Self> {
        if let Some(i) = expr.max_var() {
            if i >= dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: i + 1,
                });
            }
        }
        let expr = expr.simplify();
        let body = Body::Expr {
            structure: classify(&expr),
            curvature: expr.curvature(),
            piecewise_affine: expr.is_piecewise_affine(),
            expr,
        };
        Ok(FunctionHandle {
            inner: Arc::new(Inner {
                dim,
                body,
                lipschitz_hint: None,
            }),
        })
    }

    /// Parses an expression in `x1..x{dim}`.
    pub fn parse(src: &str, dim: usize) -> Result<Self> {
        Self::from_expr(expr::parse(src, dim)?, dim)
    }

    pub fn constant(c: f64, dim: usize) -> Self {
        Self::from_expr(Expr::Const(c), dim).expect("constants have no variables")
    }

    pub fn var(i: usize, dim: usize) -> Self {
        Self::from_expr(Expr::Var(i), dim).expect("index checked by caller")
    }

    /// `a . x + b`.
    pub fn affine(a: &[f64], b: f64) -> Self {
        let mut e = Expr::Const(b);
        for (i, &ai) in a.iter().enumerate() {
            if ai != 0.0 {
                e = e + ai * Expr::Var(i);
            }
        }
        Self::from_expr(e, a.len()).expect("indices within dimension")
    }

    /// Evaluation-only handle; rejected wherever derivatives are needed.
    pub fn black_box(dim: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        FunctionHandle {
            inner: Arc::new(Inner {
                dim,
                body: Body::BlackBox(Arc::new(f)),
                lipschitz_hint: None,
            }),
        }
    }

    pub fn with_lipschitz_hint(&self, l: f64) -> Self {
        let mut inner = (*self.inner).clone();
        inner.lipschitz_hint = Some(l);
        FunctionHandle {
            inner: Arc::new(inner),
        }
    }

    pub fn lipschitz_hint(&self) -> Option<f64> {
        self.inner.lipschitz_hint
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn expr(&self) -> Option<&Expr> {
        match &self.inner.body {
            Body::Expr { expr, .. } => Some(expr),
            Body::BlackBox(_) => None,
        }
    }

    pub fn structure(&self) -> Structure {
        match &self.inner.body {
            Body::Expr { structure, .. } => *structure,
            Body::BlackBox(_) => Structure::BlackBox,
        }
    }

    pub fn curvature(&self) -> Curvature {
        match &self.inner.body {
            Body::Expr { curvature, .. } => *curvature,
            Body::BlackBox(_) => Curvature::Unknown,
        }
    }

    pub fn is_convex(&self) -> bool {
        self.curvature().is_convex()
    }

    pub fn is_affine(&self) -> bool {
        matches!(self.curvature(), Curvature::Constant | Curvature::Affine)
    }

    pub fn is_piecewise_affine(&self) -> bool {
        match &self.inner.body {
            Body::Expr {
                piecewise_affine, ..
            } => *piecewise_affine,
            Body::BlackBox(_) => false,
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        self.expr().and_then(|e| e.constant_value())
    }

    /// Clarke regular by construction: smooth, max of smooth, or convex.
    pub fn is_clarke_regular(&self) -> bool {
        matches!(
            self.structure(),
            Structure::Smooth | Structure::MaxOfSmooth { .. }
        ) || (self.structure() != Structure::BlackBox && self.is_convex())
    }

    /// Smooth pieces of the `max - max` split, when one exists.
    pub fn pieces(&self) -> Option<(Vec<FunctionHandle>, Vec<FunctionHandle>)> {
        let (p, q) = self.expr()?.dc_split()?;
        let wrap = |v: Vec<Expr>| {
            v.into_iter()
                .map(|e| FunctionHandle::from_expr(e, self.dim()).expect("same variables"))
                .collect()
        };
        Some((wrap(p), wrap(q)))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        match &self.inner.body {
            Body::Expr { expr, .. } => expr.eval(x),
            Body::BlackBox(f) => f(x),
        }
    }

    /// Value and directional-derivative form at `x`.
    pub fn value_and_form(&self, x: &[f64]) -> Result<(f64, PlForm)> {
        check_dim(self.dim(), x.len())?;
        let Body::Expr { expr, .. } = &self.inner.body else {
            return Err(Error::NotStructured(
                "black-box handle has no directional derivative".into(),
            ));
        };
        let (v, form) = expr.eval_form(x, EPS_ACT);
        if !form.is_finite() || !v.is_finite() {
            return Err(Error::NotDifferentiable(format!("{expr} at {x:?}")));
        }
        Ok((v, form))
    }

    pub fn dd_form(&self, x: &[f64]) -> Result<PlForm> {
        Ok(self.value_and_form(x)?.1)
    }

    /// `f'(x; v)`.
    pub fn dir_derivative(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        check_dim(self.dim(), v.len())?;
        Ok(self.dd_form(x)?.eval(v))
    }

    fn combine(&self, other: &FunctionHandle, op: fn(Expr, Expr) -> Expr, f: fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch in combination");
        match (self.expr(), other.expr()) {
            (Some(a), Some(b)) => {
                FunctionHandle::from_expr(op(a.clone(), b.clone()), self.dim()).expect("same dimension")
            }
            _ => {
                let (a, b) = (self.clone(), other.clone());
                FunctionHandle::black_box(self.dim(), move |x| f(a.eval(x), b.eval(x)))
            }
        }
    }

    pub fn add(&self, other: &FunctionHandle) -> Self {
        let out = self.combine(other, |a, b| a + b, |a, b| a + b);
        match (self.lipschitz_hint(), other.lipschitz_hint()) {
            (Some(a), Some(b)) => out.with_lipschitz_hint(a + b),
            _ => out,
        }
    }

    pub fn sub(&self, other: &FunctionHandle) -> Self {
        let out = self.combine(other, |a, b| a - b, |a, b| a - b);
        match (self.lipschitz_hint(), other.lipschitz_hint()) {
            (Some(a), Some(b)) => out.with_lipschitz_hint(a + b),
            _ => out,
        }
    }

    pub fn mul(&self, other: &FunctionHandle) -> Self {
        self.combine(other, |a, b| a * b, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        let k = FunctionHandle::constant(c, self.dim());
        let out = k.mul(self);
        match self.lipschitz_hint() {
            Some(l) => out.with_lipschitz_hint(l * c.abs()),
            None => out,
        }
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    /// `max(self, other)`.
    pub fn max(&self, other: &FunctionHandle) -> Self {
        self.combine(other, |a, b| Expr::Max(vec![a, b]), f64::max)
    }

    /// `min(self, other)`.
    pub fn min(&self, other: &FunctionHandle) -> Self {
        self.combine(other, |a, b| Expr::Min(vec![a, b]), f64::min)
    }

    pub fn sum(items: &[FunctionHandle], dim: usize) -> Self {
        items
            .iter()
            .fold(FunctionHandle::constant(0.0, dim), |acc, f| acc.add(f))
    }

    /// Same function viewed in `new_dim >= dim` variables.
    pub fn embed(&self, new_dim: usize) -> Self {
        assert!(new_dim >= self.dim());
        match self.expr() {
            Some(e) => FunctionHandle::from_expr(e.clone(), new_dim).expect("indices preserved"),
            None => {
                let (f, n) = (self.clone(), self.dim());
                FunctionHandle::black_box(new_dim, move |x| f.eval(&x[..n]))
            }
        }
    }
}

/// How a Lipschitz constant is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum LipschitzMethod {
    UserHint(f64),
    SampledSlopes { samples: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    pub value: f64,
    pub method: LipschitzMethod,
}

/// Inflation applied to the largest sampled difference quotient.
pub const LIPSCHITZ_INFLATION: f64 = 1.5;

/// Estimates a Lipschitz constant of `f` on a bounded `set`.
///
/// Sampled estimates use half global pairs and half nearby pairs drawn from one
/// seeded stream, so the estimate is nondecreasing in the sample count.
pub fn estimate_lipschitz(
    f: &FunctionHandle,
    set: &PolyhedralSet,
    method: LipschitzMethod,
) -> Result<LipschitzEstimate> {
    match method {
        LipschitzMethod::UserHint(v) => {
            if !(v >= 0.0) {
                return Err(Error::InvalidModel(format!("Lipschitz hint {v} must be nonnegative")));
            }
            Ok(LipschitzEstimate { value: v, method })
        }
        LipschitzMethod::SampledSlopes { samples, seed } => {
            check_dim(f.dim(), set.dim())?;
            let (lo, hi) = set
                .bounding_box()
                .ok_or_else(|| Error::Unbounded("Lipschitz sampling needs a bounded set".into()))?;
            let diam = lo
                .iter()
                .zip(&hi)
                .map(|(a, b)| (b - a).powi(2))
                .sum::<f64>()
                .sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut best = 0.0f64;
            for k in 0..samples {
                let Some(x) = set.sample(&mut rng, 1000) else { continue };
                let y = if k % 2 == 0 {
                    set.sample(&mut rng, 1000)
                } else {
                    let r = 1e-3 * diam.max(1e-12);
                    let y: Vec<f64> = x.iter().map(|xi| xi + r * rng.gen_range(-1.0..1.0)).collect();
                    set.contains(&y, 0.0).then_some(y)
                };
                let Some(y) = y else { continue };
                let d = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if d > 0.0 {
                    best = best.max((f.eval(&x) - f.eval(&y)).abs() / d);
                }
            }
            Ok(LipschitzEstimate {
                value: LIPSCHITZ_INFLATION * best,
                method,
            })
        }
    }
}

/// Uses the handle's hint when present, otherwise sampled slopes.
pub fn lipschitz_of(f: &FunctionHandle, set: &PolyhedralSet, samples: usize, seed: u64) -> Result<LipschitzEstimate> {
    match f.lipschitz_hint() {
        Some(v) => estimate_lipschitz(f, set, LipschitzMethod::UserHint(v)),
        None => estimate_lipschitz(f, set, LipschitzMethod::SampledSlopes { samples, seed }),
    }
}

/// One-sided finite-difference estimate of `f'(x; v)` with Richardson
/// extrapolation over the decreasing `steps`.
pub fn fd_dir_derivative_oracle(f: &dyn Fn(&[f64]) -> f64, x: &[f64], v: &[f64], steps: &[f64]) -> f64 {
    assert!(!steps.is_empty());
    let f0 = f(x);
    let q = |t: f64| {
        let y: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + t * b).collect();
        (f(&y) - f0) / t
    };
    let d: Vec<f64> = steps.iter().map(|&t| q(t)).collect();
    if d.len() == 1 {
        return d[0];
    }
    let k = d.len() - 1;
    let r = steps[k - 1] / steps[k];
    (r * d[k] - d[k - 1]) / (r - 1.0)
}

/// Default steps for [`fd_dir_derivative_oracle`] at length scale `scale`.
pub fn default_fd_steps(scale: f64) -> Vec<f64> {
    (0..4).map(|i| scale * 1e-4 / 2f64.powi(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h(src: &str, n: usize) -> FunctionHandle {
        FunctionHandle::parse(src, n).unwrap()
    }

    #[test]
    fn abs_directional_derivative_at_zero() {
        let f = h("abs(x1)", 1);
        assert_eq!(f.dir_derivative(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(f.dir_derivative(&[0.0], &[-1.0]).unwrap(), 1.0);
    }

    #[test]
    fn max_of_smooth_tie() {
        let f = h("max(x1, x2)", 2);
        assert_eq!(f.structure(), Structure::MaxOfSmooth { pieces: 2 });
        assert_eq!(f.dir_derivative(&[1.0, 1.0], &[1.0, -2.0]).unwrap(), 1.0);
    }

    #[test]
    fn dc_directional_derivative() {
        let f = h("max(x1, 0) - max(-x1, 0)", 1);
        assert!(matches!(f.structure(), Structure::MaxOfSmooth { .. } | Structure::Dc { .. }));
        assert_eq!(f.dir_derivative(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(f.dir_derivative(&[0.0], &[-1.0]).unwrap(), -1.0);
        let g = h("max(x1, 0) - max(2*x1, 0)", 1);
        assert!(matches!(g.structure(), Structure::Dc { .. }));
        assert_eq!(g.dir_derivative(&[0.0], &[1.0]).unwrap(), -1.0);
        assert_eq!(g.dir_derivative(&[0.0], &[-1.0]).unwrap(), 0.0);
    }

    #[test]
    fn black_box_has_no_derivative() {
        let f = FunctionHandle::black_box(1, |x| x[0].sin());
        assert_eq!(f.structure(), Structure::BlackBox);
        assert!(matches!(f.dir_derivative(&[0.0], &[1.0]), Err(Error::NotStructured(_))));
        assert!((f.eval(&[1.0]) - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn fd_oracle_on_smooth_kink() {
        // max(0, x)^3 has zero derivative at the origin.
        let f = |x: &[f64]| x[0].max(0.0).powi(3);
        let d = fd_dir_derivative_oracle(&f, &[0.0], &[1.0], &default_fd_steps(1.0));
        assert!(d.abs() < 1e-6);
        let g = |x: &[f64]| x[0] * x[0];
        let d = fd_dir_derivative_oracle(&g, &[0.7], &[1.0], &default_fd_steps(1.0));
        assert!((d - 1.4).abs() < 1e-9);
    }

    #[test]
    fn lipschitz_estimates() {
        let set = PolyhedralSet::boxed(vec![0.0], vec![1.0]).unwrap();
        let m = LipschitzMethod::SampledSlopes { samples: 200, seed: 7 };
        let e = estimate_lipschitz(&h("2*x1", 1), &set, m).unwrap();
        assert!(e.value >= 2.0 - 1e-9 && e.value <= 3.0 + 1e-9, "{}", e.value);
        let set = PolyhedralSet::boxed(vec![-1.0], vec![1.0]).unwrap();
        let e = estimate_lipschitz(&h("abs(x1)", 1), &set, m).unwrap();
        assert!(e.value >= 1.0 && e.value <= 1.5 + 1e-9, "{}", e.value);
        let e = estimate_lipschitz(&h("x1", 1), &set, LipschitzMethod::UserHint(4.0)).unwrap();
        assert_eq!(e.value, 4.0);
    }

    #[test]
    fn pieces_reconstruct_values() {
        let f = h("max(x1^2, x2, 1 - x1)", 2);
        let (p, q) = f.pieces().unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(q.len(), 1);
        for x in [[0.2, 0.1], [-1.0, 3.0], [2.0, 0.0]] {
            let m = p.iter().map(|g| g.eval(&x)).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(m, f.eval(&x));
        }
    }

    fn random_expr() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            Just("x1".to_string()),
            Just("x2".to_string()),
            (-2.0f64..2.0).prop_map(|c| format!("({c:.3})")),
        ];
        leaf.prop_recursive(4, 24, 3, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("max({a}, {b})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("min({a}, {b})")),
                inner.clone().prop_map(|a| format!("abs({a})")),
                inner.prop_map(|a| format!("pow({a}, 2)")),
            ]
        })
    }

    proptest! {
        #[test]
        fn directional_derivative_is_positively_homogeneous(
            src in random_expr(),
            x in prop::array::uniform2(-2.0f64..2.0),
            v in prop::array::uniform2(-1.0f64..1.0),
            t in 0.0f64..4.0,
        ) {
            let f = h(&src, 2);
            let d = f.dir_derivative(&x, &v).unwrap();
            let tv = [t * v[0], t * v[1]];
            let dt = f.dir_derivative(&x, &tv).unwrap();
            prop_assert!((dt - t * d).abs() <= 1e-8 * (1.0 + dt.abs()));
        }

        #[test]
        fn directional_derivative_matches_finite_differences(
            src in random_expr(),
            x in prop::array::uniform2(-2.0f64..2.0),
            v in prop::array::uniform2(-1.0f64..1.0),
        ) {
            let f = h(&src, 2);
            let d = f.dir_derivative(&x, &v).unwrap();
            let ev = |y: &[f64]| f.eval(y);
            let fd = fd_dir_derivative_oracle(&ev, &x, &v, &[1e-7, 5e-8]);
            prop_assert!((d - fd).abs() <= 1e-4 * (1.0 + d.abs()), "{src}: {d} vs {fd}");
        }

        #[test]
        fn max_of_smooth_value_is_max_of_pieces(
            a in -2.0f64..2.0, b in -2.0f64..2.0,
            x in prop::array::uniform2(-2.0f64..2.0),
        ) {
            let f = h(&format!("max(x1^2 + ({a}), ({b})*x2, x1 - x2)"), 2);
            let (p, _) = f.pieces().unwrap();
            let m = p.iter().map(|g| g.eval(&x)).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((m - f.eval(&x)).abs() < 1e-12);
        }
    }
}
