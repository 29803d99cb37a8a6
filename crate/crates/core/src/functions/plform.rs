//! Positively homogeneous piecewise-linear functions of a direction.
//!
//! A form is stored as `max_i p_i.v - max_j q_j.v`. Both piece lists are
//! nonempty; a concave side equal to `{0}` means the form is convex. The set is
//! closed under sums, scalar multiples, pointwise max/min and negation, which is
//! what forward-mode directional differentiation of min/max/abs compositions
//! needs.

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlForm {
    dim: usize,
    convex: Vec<Vec<f64>>,
    concave: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn is_zero(p: &[f64]) -> bool {
    p.iter().all(|&c| c == 0.0)
}

fn minkowski(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if b.len() == 1 && is_zero(&b[0]) {
        return a.to_vec();
    }
    if a.len() == 1 && is_zero(&a[0]) {
        return b.to_vec();
    }
    let mut out = Vec::with_capacity(a.len() * b.len());
    for p in a {
        for q in b {
            out.push(p.iter().zip(q).map(|(x, y)| x + y).collect());
        }
    }
    out
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= 1e-14 * (1.0 + x.abs().max(y.abs())))
}

fn dedupe(mut v: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    v.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(v.len());
    for p in v {
        if !out.iter().any(|q| close(q, &p)) {
            out.push(p);
        }
    }
    out
}

impl PlForm {
    pub fn zero(dim: usize) -> Self {
        PlForm {
            dim,
            convex: vec![vec![0.0; dim]],
            concave: vec![vec![0.0; dim]],
        }
    }

    pub fn linear(g: Vec<f64>) -> Self {
        let dim = g.len();
        PlForm {
            dim,
            convex: vec![g],
            concave: vec![vec![0.0; dim]],
        }
    }

    pub fn unit(dim: usize, i: usize) -> Self {
        let mut g = vec![0.0; dim];
        g[i] = 1.0;
        Self::linear(g)
    }

    /// `max_i p_i.v - max_j q_j.v`; an empty `concave` list means zero.
    pub fn from_pieces(dim: usize, convex: Vec<Vec<f64>>, concave: Vec<Vec<f64>>) -> Self {
        assert!(!convex.is_empty(), "convex side needs at least one piece");
        let concave = if concave.is_empty() {
            vec![vec![0.0; dim]]
        } else {
            concave
        };
        PlForm {
            dim,
            convex,
            concave,
        }
        .normalized()
    }

    pub(crate) fn normalized(mut self) -> Self {
        self.convex = dedupe(self.convex);
        self.concave = dedupe(self.concave);
        if self.concave.len() == 1 && !is_zero(&self.concave[0]) {
            let q = std::mem::replace(&mut self.concave[0], vec![0.0; self.dim]);
            for p in &mut self.convex {
                for (pi, qi) in p.iter_mut().zip(&q) {
                    *pi -= qi;
                }
            }
            self.convex = dedupe(std::mem::take(&mut self.convex));
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn convex_pieces(&self) -> &[Vec<f64>] {
        &self.convex
    }

    pub fn concave_pieces(&self) -> &[Vec<f64>] {
        &self.concave
    }

    /// True when the concave side is the single zero piece.
    pub fn is_convex(&self) -> bool {
        self.concave.len() == 1 && is_zero(&self.concave[0])
    }

    pub fn is_linear(&self) -> bool {
        self.is_convex() && self.convex.len() == 1
    }

    pub fn piece_count(&self) -> usize {
        self.convex.len() + self.concave.len()
    }

    pub fn is_finite(&self) -> bool {
        self.convex
            .iter()
            .chain(&self.concave)
            .all(|p| p.iter().all(|c| c.is_finite()))
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        let up = self
            .convex
            .iter()
            .map(|p| dot(p, v))
            .fold(f64::NEG_INFINITY, f64::max);
        let down = self
            .concave
            .iter()
            .map(|q| dot(q, v))
            .fold(f64::NEG_INFINITY, f64::max);
        up - down
    }

    pub fn add(&self, other: &PlForm) -> PlForm {
        assert_eq!(self.dim, other.dim);
        PlForm {
            dim: self.dim,
            convex: minkowski(&self.convex, &other.convex),
            concave: minkowski(&self.concave, &other.concave),
        }
        .normalized()
    }

    pub fn neg(&self) -> PlForm {
        PlForm {
            dim: self.dim,
            convex: self.concave.clone(),
            concave: self.convex.clone(),
        }
        .normalized()
    }

    pub fn scale(&self, c: f64) -> PlForm {
        if c == 0.0 {
            return PlForm::zero(self.dim);
        }
        let s = |v: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            v.iter()
                .map(|p| p.iter().map(|x| x * c.abs()).collect())
                .collect()
        };
        let (convex, concave) = if c > 0.0 {
            (s(&self.convex), s(&self.concave))
        } else if c < 0.0 {
            (s(&self.concave), s(&self.convex))
        } else {
            // NaN scale: keep the poison visible.
            let nan = vec![vec![f64::NAN; self.dim]];
            (nan.clone(), nan)
        };
        PlForm {
            dim: self.dim,
            convex,
            concave,
        }
        .normalized()
    }

    pub fn sub(&self, other: &PlForm) -> PlForm {
        self.add(&other.neg())
    }

    /// Pointwise maximum: `max(P1 - Q1, P2 - Q2) = max(P1 + Q2, P2 + Q1) - (Q1 + Q2)`.
    pub fn max(&self, other: &PlForm) -> PlForm {
        assert_eq!(self.dim, other.dim);
        let mut convex = minkowski(&self.convex, &other.concave);
        convex.extend(minkowski(&other.convex, &self.concave));
        PlForm {
            dim: self.dim,
            convex,
            concave: minkowski(&self.concave, &other.concave),
        }
        .normalized()
    }

    pub fn min(&self, other: &PlForm) -> PlForm {
        self.neg().max(&other.neg()).neg()
    }

    pub fn max_with_zero(&self) -> PlForm {
        self.max(&PlForm::zero(self.dim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vecs(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0f64..3.0, n)
    }

    fn form(n: usize) -> impl Strategy<Value = PlForm> {
        (
            prop::collection::vec(vecs(n), 1..4),
            prop::collection::vec(vecs(n), 0..3),
        )
            .prop_map(move |(p, q)| PlForm::from_pieces(n, p, q))
    }

    fn direct(p: &[Vec<f64>], q: &[Vec<f64>], v: &[f64]) -> f64 {
        let m = |s: &[Vec<f64>]| {
            if s.is_empty() {
                0.0
            } else {
                s.iter().map(|a| dot(a, v)).fold(f64::NEG_INFINITY, f64::max)
            }
        };
        m(p) - m(q)
    }

    #[test]
    fn abs_at_a_kink_is_a_convex_two_piece_form() {
        let a = PlForm::unit(1, 0);
        let abs = a.max(&a.neg());
        assert!(abs.is_convex());
        assert_eq!(abs.convex_pieces().len(), 2);
        assert_eq!(abs.eval(&[-2.0]), 2.0);
        assert_eq!(abs.eval(&[3.0]), 3.0);
    }

    proptest! {
        #[test]
        fn construction_matches_direct_evaluation(
            p in prop::collection::vec(vecs(2), 1..4),
            q in prop::collection::vec(vecs(2), 0..3),
            v in vecs(2),
        ) {
            let f = PlForm::from_pieces(2, p.clone(), q.clone());
            prop_assert!((f.eval(&v) - direct(&p, &q, &v)).abs() < 1e-9);
        }

        #[test]
        fn algebra_is_pointwise(a in form(2), b in form(2), v in vecs(2), c in -2.0f64..2.0) {
            let (x, y) = (a.eval(&v), b.eval(&v));
            prop_assert!((a.add(&b).eval(&v) - (x + y)).abs() < 1e-9);
            prop_assert!((a.max(&b).eval(&v) - x.max(y)).abs() < 1e-9);
            prop_assert!((a.min(&b).eval(&v) - x.min(y)).abs() < 1e-9);
            prop_assert!((a.scale(c).eval(&v) - c * x).abs() < 1e-9);
            prop_assert!((a.neg().eval(&v) + x).abs() < 1e-9);
        }

        #[test]
        fn positively_homogeneous(a in form(3), v in vecs(3), t in 0.0f64..5.0) {
            let scaled: Vec<f64> = v.iter().map(|x| x * t).collect();
            prop_assert!((a.eval(&scaled) - t * a.eval(&v)).abs() < 1e-8);
        }
    }
}
