//! Small curated problems with known answers, shared by tests, benches and
//! the command-line tool.

use crate::approx::{make_truncation_family, DeltaFn};
use crate::continuation::{Schedule, TermFamilies};
use crate::functions::FunctionHandle;
use crate::model::{build_l0, Boundary, HeavisideTerm, LinearInequality, PolyhedralSet, ProblemSpec, ThreePiece};

fn h(src: &str, n: usize) -> FunctionHandle {
    FunctionHandle::parse(src, n).expect("curated expression parses")
}

fn boxed(n: usize, a: f64) -> PolyhedralSet {
    PolyhedralSet::boxed(vec![-a; n], vec![a; n]).expect("nonempty box")
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub name: &'static str,
    pub problem: ProblemSpec,
    pub start: Vec<f64>,
    /// Global minimizer.
    pub minimizer: Vec<f64>,
    pub minimum: f64,
}

/// `(x - 1)^2 + 0.5 |x|_0` on `[-2, 2]`.
pub fn l0_scalar() -> Instance {
    Instance {
        name: "l0-scalar",
        problem: ProblemSpec::new(h("(x1 - 1)^2", 1), build_l0(&[0.5]).unwrap(), vec![], None, boxed(1, 2.0)).unwrap(),
        start: vec![0.5],
        minimizer: vec![1.0],
        minimum: 0.5,
    }
}

/// `(x - 0.3)^2 + 0.5 |x|_0` on `[-2, 2]`; the penalty wins and the minimizer is 0.
pub fn l0_shrink() -> Instance {
    Instance {
        name: "l0-shrink",
        problem: ProblemSpec::new(h("(x1 - 0.3)^2", 1), build_l0(&[0.5]).unwrap(), vec![], None, boxed(1, 2.0)).unwrap(),
        start: vec![0.5],
        minimizer: vec![0.0],
        minimum: 0.09,
    }
}

/// `(x1 - 1)^2 + (x2 + 0.1)^2 + 0.3 |x|_0` on `[-2, 2]^2`.
pub fn l0_plane() -> Instance {
    Instance {
        name: "l0-plane",
        problem: ProblemSpec::new(
            h("(x1 - 1)^2 + (x2 + 0.1)^2", 2),
            build_l0(&[0.3, 0.3]).unwrap(),
            vec![],
            None,
            boxed(2, 2.0),
        )
        .unwrap(),
        start: vec![0.5, -0.5],
        minimizer: vec![1.0, 0.0],
        minimum: 0.31,
    }
}

/// `(x1 - 2)^2 + (x2 - 2)^2 + 0.2 |x|_0` on `[-3, 3]^2` with `x1 + x2 <= 2`.
pub fn l0_row() -> Instance {
    let set = PolyhedralSet::new(
        2,
        vec![LinearInequality { a: vec![1.0, 1.0], d: 2.0 }],
        vec![-3.0, -3.0],
        vec![3.0, 3.0],
    )
    .unwrap();
    Instance {
        name: "l0-row",
        problem: ProblemSpec::new(h("(x1 - 2)^2 + (x2 - 2)^2", 2), build_l0(&[0.2, 0.2]).unwrap(), vec![], None, set).unwrap(),
        start: vec![0.0, 0.0],
        minimizer: vec![1.0, 1.0],
        minimum: 2.4,
    }
}

/// `(x - 2)^2` subject to `x 1(x > 0) <= 1` on `[-3, 3]`.
pub fn budget_scalar() -> Instance {
    Instance {
        name: "budget-scalar",
        problem: ProblemSpec::new(
            h("(x1 - 2)^2", 1),
            vec![],
            vec![HeavisideTerm::open(h("x1", 1), h("x1", 1))],
            Some(1.0),
            boxed(1, 3.0),
        )
        .unwrap(),
        start: vec![0.5],
        minimizer: vec![1.0],
        minimum: 1.0,
    }
}

/// `(x1 - 2)^2 + (x2 - 2)^2` subject to `x1 1(x1 > 0) + x2 1(x2 > 0) <= 2` on `[-3, 3]^2`.
pub fn budget_plane() -> Instance {
    Instance {
        name: "budget-plane",
        problem: ProblemSpec::new(
            h("(x1 - 2)^2 + (x2 - 2)^2", 2),
            vec![],
            vec![
                HeavisideTerm::open(h("x1", 2), h("x1", 2)),
                HeavisideTerm::open(h("x2", 2), h("x2", 2)),
            ],
            Some(2.0),
            boxed(2, 3.0),
        )
        .unwrap(),
        start: vec![0.5, 0.5],
        minimizer: vec![1.0, 1.0],
        minimum: 2.0,
    }
}

/// Epigraphical instances: each satisfies the descent condition for the
/// functional constraint (or has none).
pub fn lift_instances() -> Vec<Instance> {
    vec![l0_scalar(), l0_shrink(), l0_plane(), l0_row(), budget_scalar(), budget_plane()]
}

/// Continuation instances with nonnegative multipliers and convex or
/// piecewise affine inner functions.
pub fn continuation_instances() -> Vec<Instance> {
    lift_instances()
}

/// Penalty below the cost slope at the budget boundary of [`budget_scalar`]:
/// the lifted solve settles at the infeasible point 1.75.
pub const WEAK_PENALTY: f64 = 0.5;

/// A continuation instance whose stage points converge to the zero set of
/// the first constraint term while its smoothed indicator stays at 0.4: the
/// cost pushes right until the penalty engages.
pub fn vanishing_shoulder() -> (ProblemSpec, TermFamilies, Schedule, Vec<f64>) {
    let fam = make_truncation_family(h("x1", 1), DeltaFn::power(1.0, 1.0), DeltaFn::power(1.0, 1.0)).unwrap();
    let p = ProblemSpec::new(
        h("-x1", 1),
        vec![],
        vec![
            HeavisideTerm::open(h("1", 1), h("x1", 1)),
            HeavisideTerm::open(h("x1 + 0.3", 1), h("1", 1)),
        ],
        Some(0.7),
        boxed(1, 1.0),
    )
    .unwrap();
    let fams = TermFamilies::uniform(&fam, &p).unwrap();
    (p, fams, Schedule::default(), vec![0.0])
}

/// `1 + x/2` on `[0, 1)`, `(x + 1)^2 + 1/2` below, `(x - 2)^2 - 1/2` from 1
/// on, over `[-2, 3]`. From 0.5 descent reaches the lower boundary 0.
pub fn three_piece_demo() -> (ThreePiece, PolyhedralSet, Vec<f64>) {
    let tp = ThreePiece {
        pieces: [h("1 + 0.5 * x1", 1), h("(x1 + 1)^2 + 0.5", 1), h("(x1 - 2)^2 - 0.5", 1)],
        f: h("x1", 1),
        a: 0.0,
        b: 1.0,
        boundary: Boundary::ClosedRight,
    };
    (tp, PolyhedralSet::boxed(vec![-2.0], vec![3.0]).unwrap(), vec![0.5])
}

/// The problem form of a three-piece objective.
pub fn three_piece_problem(tp: &ThreePiece, set: &PolyhedralSet) -> ProblemSpec {
    let e = tp.expand().expect("valid three-piece data");
    ProblemSpec::new(e.constant, e.terms, vec![], None, set.clone()).expect("consistent dimensions")
}
