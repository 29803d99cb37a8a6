//! Thin dense front-end over the `minilp` simplex solver.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpFailure {
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

/// Minimize `cost . x` subject to dense rows and per-variable bounds.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    cost: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    rows: Vec<(Vec<f64>, Sense, f64)>,
}

impl LinearProgram {
    /// All variables start free.
    pub fn new(n: usize) -> Self {
        LinearProgram {
            cost: vec![0.0; n],
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); n],
            rows: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn set_cost(&mut self, j: usize, c: f64) {
        self.cost[j] = c;
    }

    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.bounds[j] = (lo, hi);
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        self.bounds[j]
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.cost.len());
        self.rows.push((coeffs, sense, rhs));
    }

    pub fn solve(&self) -> Result<LpSolution, LpFailure> {
        if self.bounds.iter().any(|&(lo, hi)| lo > hi) {
            return Err(LpFailure::Infeasible);
        }
        let mut p = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<_> = self
            .cost
            .iter()
            .zip(&self.bounds)
            .map(|(&c, &b)| p.add_var(c, b))
            .collect();
        for (coeffs, sense, rhs) in &self.rows {
            let terms: Vec<_> = coeffs
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(j, &c)| (vars[j], c))
                .collect();
            if terms.is_empty() {
                let ok = match sense {
                    Sense::Le => 0.0 <= *rhs + 1e-12,
                    Sense::Ge => 0.0 >= *rhs - 1e-12,
                    Sense::Eq => rhs.abs() <= 1e-12,
                };
                if !ok {
                    return Err(LpFailure::Infeasible);
                }
                continue;
            }
            let op = match sense {
                Sense::Le => ComparisonOp::Le,
                Sense::Ge => ComparisonOp::Ge,
                Sense::Eq => ComparisonOp::Eq,
            };
            p.add_constraint(terms.as_slice(), op, *rhs);
        }
        match p.solve() {
            Ok(sol) => Ok(LpSolution {
                x: vars.iter().map(|v| sol[*v]).collect(),
                objective: sol.objective(),
            }),
            Err(minilp::Error::Infeasible) => Err(LpFailure::Infeasible),
            Err(minilp::Error::Unbounded) => Err(LpFailure::Unbounded),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Vertex enumeration for two-variable problems with finite bounds.
    fn brute_force_2d(lp: &LinearProgram) -> Option<f64> {
        let mut lines: Vec<([f64; 2], f64)> = Vec::new();
        for (c, _, r) in &lp.rows {
            lines.push(([c[0], c[1]], *r));
        }
        for j in 0..2 {
            let (lo, hi) = lp.bounds(j);
            let mut e = [0.0; 2];
            e[j] = 1.0;
            lines.push((e, lo));
            lines.push((e, hi));
        }
        let feasible = |x: [f64; 2]| {
            (0..2).all(|j| {
                let (lo, hi) = lp.bounds(j);
                x[j] >= lo - 1e-9 && x[j] <= hi + 1e-9
            }) && lp.rows.iter().all(|(c, s, r)| {
                let v = c[0] * x[0] + c[1] * x[1];
                match s {
                    Sense::Le => v <= r + 1e-9,
                    Sense::Ge => v >= r - 1e-9,
                    Sense::Eq => (v - r).abs() <= 1e-9,
                }
            })
        };
        let mut best: Option<f64> = None;
        for i in 0..lines.len() {
            for k in i + 1..lines.len() {
                let (a, r1) = lines[i];
                let (b, r2) = lines[k];
                let det = a[0] * b[1] - a[1] * b[0];
                if det.abs() < 1e-12 {
                    continue;
                }
                let x = [(r1 * b[1] - r2 * a[1]) / det, (a[0] * r2 - b[0] * r1) / det];
                if feasible(x) {
                    let v = lp.cost[0] * x[0] + lp.cost[1] * x[1];
                    best = Some(best.map_or(v, |b: f64| b.min(v)));
                }
            }
        }
        best
    }

    #[test]
    fn infeasible_and_unbounded_are_reported() {
        let mut lp = LinearProgram::new(1);
        lp.add_row(vec![1.0], Sense::Ge, 2.0);
        lp.add_row(vec![1.0], Sense::Le, 1.0);
        assert_eq!(lp.solve().unwrap_err(), LpFailure::Infeasible);
        let mut lp = LinearProgram::new(1);
        lp.set_cost(0, 1.0);
        assert_eq!(lp.solve().unwrap_err(), LpFailure::Unbounded);
    }

    proptest! {
        #[test]
        fn matches_vertex_enumeration(
            c in prop::array::uniform2(-3.0f64..3.0),
            rows in prop::collection::vec((prop::array::uniform2(-2.0f64..2.0), -1.0f64..2.0), 0..4),
        ) {
            let mut lp = LinearProgram::new(2);
            lp.set_cost(0, c[0]);
            lp.set_cost(1, c[1]);
            lp.set_bounds(0, -1.0, 1.0);
            lp.set_bounds(1, -1.0, 1.0);
            for (a, r) in &rows {
                lp.add_row(a.to_vec(), Sense::Le, *r);
            }
            match (lp.solve(), brute_force_2d(&lp)) {
                (Ok(sol), Some(v)) => prop_assert!((sol.objective - v).abs() < 1e-6),
                (Err(LpFailure::Infeasible), None) => {}
                (got, want) => prop_assert!(false, "solver {:?} vs oracle {:?}", got.map(|s| s.objective), want),
            }
        }
    }
}
