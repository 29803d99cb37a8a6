//! Expression trees over `x1..xn` with `+ - * / ^`, `pow`, `sqrt`, `min`,
//! `max` and `abs`.

use std::fmt;
use std::ops;

use super::plform::PlForm;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based variable index.
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    /// Constant exponent.
    Pow(Box<Expr>, f64),
    Max(Vec<Expr>),
    Min(Vec<Expr>),
    Abs(Box<Expr>),
}

/// Coarse curvature classes used to flag convexity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum Curvature {
    Constant,
    Affine,
    Convex,
    Concave,
    Unknown,
}

impl Curvature {
    pub fn is_convex(self) -> bool {
        matches!(self, Curvature::Constant | Curvature::Affine | Curvature::Convex)
    }

    pub fn is_concave(self) -> bool {
        matches!(self, Curvature::Constant | Curvature::Affine | Curvature::Concave)
    }

    fn neg(self) -> Self {
        match self {
            Curvature::Convex => Curvature::Concave,
            Curvature::Concave => Curvature::Convex,
            c => c,
        }
    }

    fn add(self, o: Self) -> Self {
        use Curvature::*;
        match (self, o) {
            (Constant, c) | (c, Constant) => c,
            (Affine, c) | (c, Affine) => c,
            (Convex, Convex) => Convex,
            (Concave, Concave) => Concave,
            _ => Unknown,
        }
    }

    fn scale(self, c: f64) -> Self {
        if c == 0.0 {
            Curvature::Constant
        } else if c > 0.0 {
            self
        } else {
            self.neg()
        }
    }
}

fn powf(a: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() <= 64.0 {
        a.powi(p as i32)
    } else {
        a.powf(p)
    }
}

impl Expr {
    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn c(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn pow(self, p: f64) -> Expr {
        Expr::Pow(Box::new(self), p)
    }

    pub fn abs(self) -> Expr {
        Expr::Abs(Box::new(self))
    }

    pub fn max_of(args: Vec<Expr>) -> Expr {
        assert!(!args.is_empty());
        Expr::Max(args)
    }

    pub fn min_of(args: Vec<Expr>) -> Expr {
        assert!(!args.is_empty());
        Expr::Min(args)
    }

    fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Var(_) => vec![],
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => vec![a, b],
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Abs(a) => vec![a],
            Expr::Max(v) | Expr::Min(v) => v.iter().collect(),
        }
    }

    /// Largest zero-based variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Var(i) => Some(*i),
            _ => self.children().into_iter().filter_map(|c| c.max_var()).max(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.max_var().is_none()
    }

    pub fn constant_value(&self) -> Option<f64> {
        if self.is_constant() {
            Some(self.eval(&[]))
        } else {
            None
        }
    }

    /// No min/max/abs anywhere in the tree.
    pub fn is_smooth(&self) -> bool {
        match self {
            Expr::Max(_) | Expr::Min(_) | Expr::Abs(_) => false,
            _ => self.children().into_iter().all(|c| c.is_smooth()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Neg(a) => -a.eval(x),
            Expr::Pow(a, p) => powf(a.eval(x), *p),
            Expr::Max(v) => v.iter().map(|e| e.eval(x)).fold(f64::NEG_INFINITY, f64::max),
            Expr::Min(v) => v.iter().map(|e| e.eval(x)).fold(f64::INFINITY, f64::min),
            Expr::Abs(a) => a.eval(x).abs(),
        }
    }

    /// Value and directional-derivative form at `x`.
    ///
    /// Arguments of `max`/`min` within `eps * max(1, |value|)` of the extreme
    /// value, and `abs` arguments within `eps` of zero, are treated as ties.
    pub fn eval_form(&self, x: &[f64], eps: f64) -> (f64, PlForm) {
        let n = x.len();
        match self {
            Expr::Const(c) => (*c, PlForm::zero(n)),
            Expr::Var(i) => (x[*i], PlForm::unit(n, *i)),
            Expr::Add(a, b) => {
                let ((va, fa), (vb, fb)) = (a.eval_form(x, eps), b.eval_form(x, eps));
                (va + vb, fa.add(&fb))
            }
            Expr::Sub(a, b) => {
                let ((va, fa), (vb, fb)) = (a.eval_form(x, eps), b.eval_form(x, eps));
                (va - vb, fa.sub(&fb))
            }
            Expr::Mul(a, b) => {
                let ((va, fa), (vb, fb)) = (a.eval_form(x, eps), b.eval_form(x, eps));
                (va * vb, fa.scale(vb).add(&fb.scale(va)))
            }
            Expr::Div(a, b) => {
                let ((va, fa), (vb, fb)) = (a.eval_form(x, eps), b.eval_form(x, eps));
                (va / vb, fa.scale(1.0 / vb).add(&fb.scale(-va / (vb * vb))))
            }
            Expr::Neg(a) => {
                let (va, fa) = a.eval_form(x, eps);
                (-va, fa.neg())
            }
            Expr::Pow(a, p) => {
                let (va, fa) = a.eval_form(x, eps);
                let slope = if va == 0.0 {
                    if *p > 1.0 {
                        0.0
                    } else if *p == 1.0 {
                        1.0
                    } else {
                        f64::NAN
                    }
                } else {
                    p * powf(va, p - 1.0)
                };
                (powf(va, *p), fa.scale(slope))
            }
            Expr::Max(args) | Expr::Min(args) => {
                let is_max = matches!(self, Expr::Max(_));
                let parts: Vec<(f64, PlForm)> = args.iter().map(|e| e.eval_form(x, eps)).collect();
                let best = parts
                    .iter()
                    .map(|p| p.0)
                    .fold(if is_max { f64::NEG_INFINITY } else { f64::INFINITY }, |m, v| {
                        if is_max {
                            m.max(v)
                        } else {
                            m.min(v)
                        }
                    });
                let tol = eps * best.abs().max(1.0);
                let mut form: Option<PlForm> = None;
                for (v, f) in &parts {
                    if (v - best).abs() <= tol {
                        form = Some(match form {
                            None => f.clone(),
                            Some(g) if is_max => g.max(f),
                            Some(g) => g.min(f),
                        });
                    }
                }
                (best, form.expect("at least one active argument"))
            }
            Expr::Abs(a) => {
                let (va, fa) = a.eval_form(x, eps);
                let form = if va > eps {
                    fa
                } else if va < -eps {
                    fa.neg()
                } else {
                    fa.max(&fa.neg())
                };
                (va.abs(), form)
            }
        }
    }

    pub fn curvature(&self) -> Curvature {
        use Curvature::*;
        if self.is_constant() {
            return Constant;
        }
        match self {
            Expr::Const(_) => Constant,
            Expr::Var(_) => Affine,
            Expr::Add(a, b) => a.curvature().add(b.curvature()),
            Expr::Sub(a, b) => a.curvature().add(b.curvature().neg()),
            Expr::Neg(a) => a.curvature().neg(),
            Expr::Mul(a, b) => match (a.constant_value(), b.constant_value()) {
                (Some(c), _) => b.curvature().scale(c),
                (_, Some(c)) => a.curvature().scale(c),
                _ => Unknown,
            },
            Expr::Div(a, b) => match b.constant_value() {
                Some(c) => a.curvature().scale(1.0 / c),
                None => Unknown,
            },
            Expr::Pow(a, p) => {
                let ca = a.curvature();
                if *p == 1.0 {
                    ca
                } else if ca == Affine && p.fract() == 0.0 && (*p as i64) % 2 == 0 && *p > 0.0 {
                    Convex
                } else {
                    Unknown
                }
            }
            Expr::Max(v) => {
                if v.iter().all(|e| e.curvature().is_convex()) {
                    Convex
                } else {
                    Unknown
                }
            }
            Expr::Min(v) => {
                if v.iter().all(|e| e.curvature().is_concave()) {
                    Concave
                } else {
                    Unknown
                }
            }
            Expr::Abs(a) => {
                if a.curvature() == Affine {
                    Convex
                } else {
                    Unknown
                }
            }
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self.curvature(), Curvature::Constant | Curvature::Affine)
    }

    /// Built from affine pieces by sums, constant scalings, min, max and abs.
    pub fn is_piecewise_affine(&self) -> bool {
        if self.is_constant() {
            return true;
        }
        match self {
            Expr::Const(_) | Expr::Var(_) => true,
            Expr::Add(a, b) | Expr::Sub(a, b) => a.is_piecewise_affine() && b.is_piecewise_affine(),
            Expr::Neg(a) | Expr::Abs(a) => a.is_piecewise_affine(),
            Expr::Mul(a, b) => {
                (a.is_constant() && b.is_piecewise_affine())
                    || (b.is_constant() && a.is_piecewise_affine())
            }
            Expr::Div(a, b) => b.is_constant() && a.is_piecewise_affine(),
            Expr::Pow(a, p) => *p == 1.0 && a.is_piecewise_affine(),
            Expr::Max(v) | Expr::Min(v) => v.iter().all(|e| e.is_piecewise_affine()),
        }
    }

    /// Splits the expression as `max(convex) - max(concave)` with smooth pieces.
    ///
    /// Returns `None` when a nonsmooth subexpression is multiplied by a
    /// nonconstant factor or fed through a nonlinear smooth operation.
    pub fn dc_split(&self) -> Option<(Vec<Expr>, Vec<Expr>)> {
        if self.is_smooth() {
            return Some((vec![self.clone()], vec![Expr::Const(0.0)]));
        }
        let pair = |e: &Expr| e.dc_split();
        let r = match self {
            Expr::Add(a, b) => {
                let ((p1, q1), (p2, q2)) = (pair(a)?, pair(b)?);
                (expr_sum(&p1, &p2), expr_sum(&q1, &q2))
            }
            Expr::Sub(a, b) => {
                let ((p1, q1), (p2, q2)) = (pair(a)?, pair(b)?);
                (expr_sum(&p1, &q2), expr_sum(&q1, &p2))
            }
            Expr::Neg(a) => {
                let (p, q) = pair(a)?;
                (q, p)
            }
            Expr::Mul(a, b) => {
                let (c, e) = match (a.constant_value(), b.constant_value()) {
                    (Some(c), _) => (c, b),
                    (_, Some(c)) => (c, a),
                    _ => return None,
                };
                let (p, q) = pair(e)?;
                expr_scale(p, q, c)
            }
            Expr::Div(a, b) => {
                let c = b.constant_value()?;
                let (p, q) = pair(a)?;
                expr_scale(p, q, 1.0 / c)
            }
            Expr::Pow(a, p) if *p == 1.0 => pair(a)?,
            Expr::Pow(..) => return None,
            Expr::Max(v) | Expr::Min(v) => {
                let is_max = matches!(self, Expr::Max(_));
                let mut acc: Option<(Vec<Expr>, Vec<Expr>)> = None;
                for e in v {
                    let (p, q) = pair(e)?;
                    let (p, q) = if is_max { (p, q) } else { (q, p) };
                    acc = Some(match acc {
                        None => (p, q),
                        Some((p1, q1)) => {
                            let mut conv = expr_sum(&p1, &q);
                            conv.extend(expr_sum(&p, &q1));
                            (conv, expr_sum(&q1, &q))
                        }
                    });
                }
                let (p, q) = acc?;
                if is_max {
                    (p, q)
                } else {
                    (q, p)
                }
            }
            Expr::Abs(a) => {
                let (p, q) = pair(a)?;
                let mut conv = expr_sum(&p, &p);
                conv.extend(expr_sum(&q, &q));
                (conv, expr_sum(&p, &q))
            }
            Expr::Const(_) | Expr::Var(_) => unreachable!("smooth leaves handled above"),
        };
        Some(simplify_split(r))
    }

    /// Folds constant subtrees.
    pub fn simplify(self) -> Expr {
        if self.is_constant() {
            return Expr::Const(self.eval(&[]));
        }
        match self {
            Expr::Add(a, b) => match (a.simplify(), b.simplify()) {
                (Expr::Const(z), e) | (e, Expr::Const(z)) if z == 0.0 => e,
                (a, b) => Expr::Add(Box::new(a), Box::new(b)),
            },
            Expr::Sub(a, b) => match (a.simplify(), b.simplify()) {
                (e, Expr::Const(z)) if z == 0.0 => e,
                (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
            },
            Expr::Mul(a, b) => match (a.simplify(), b.simplify()) {
                (Expr::Const(o), e) | (e, Expr::Const(o)) if o == 1.0 => e,
                (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
            },
            Expr::Div(a, b) => Expr::Div(Box::new(a.simplify()), Box::new(b.simplify())),
            Expr::Neg(a) => Expr::Neg(Box::new(a.simplify())),
            Expr::Pow(a, p) => Expr::Pow(Box::new(a.simplify()), p),
            Expr::Abs(a) => Expr::Abs(Box::new(a.simplify())),
            Expr::Max(v) => Expr::Max(v.into_iter().map(Expr::simplify).collect()),
            Expr::Min(v) => Expr::Min(v.into_iter().map(Expr::simplify).collect()),
            e => e,
        }
    }

    /// Rewrites every variable index through `f`.
    pub fn map_vars(&self, f: &dyn Fn(usize) -> Expr) -> Expr {
        let m = |e: &Expr| Box::new(e.map_vars(f));
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => f(*i),
            Expr::Add(a, b) => Expr::Add(m(a), m(b)),
            Expr::Sub(a, b) => Expr::Sub(m(a), m(b)),
            Expr::Mul(a, b) => Expr::Mul(m(a), m(b)),
            Expr::Div(a, b) => Expr::Div(m(a), m(b)),
            Expr::Neg(a) => Expr::Neg(m(a)),
            Expr::Pow(a, p) => Expr::Pow(m(a), *p),
            Expr::Abs(a) => Expr::Abs(m(a)),
            Expr::Max(v) => Expr::Max(v.iter().map(|e| e.map_vars(f)).collect()),
            Expr::Min(v) => Expr::Min(v.iter().map(|e| e.map_vars(f)).collect()),
        }
    }
}

fn expr_sum(a: &[Expr], b: &[Expr]) -> Vec<Expr> {
    let zero = |v: &[Expr]| v.len() == 1 && v[0] == Expr::Const(0.0);
    if zero(b) {
        return a.to_vec();
    }
    if zero(a) {
        return b.to_vec();
    }
    let mut out = Vec::with_capacity(a.len() * b.len());
    for p in a {
        for q in b {
            out.push((p.clone() + q.clone()).simplify());
        }
    }
    out
}

fn expr_scale(p: Vec<Expr>, q: Vec<Expr>, c: f64) -> (Vec<Expr>, Vec<Expr>) {
    let s = |v: Vec<Expr>| -> Vec<Expr> {
        v.into_iter()
            .map(|e| (Expr::Const(c.abs()) * e).simplify())
            .collect()
    };
    if c >= 0.0 {
        (s(p), s(q))
    } else {
        (s(q), s(p))
    }
}

fn simplify_split((p, q): (Vec<Expr>, Vec<Expr>)) -> (Vec<Expr>, Vec<Expr>) {
    let dedup = |v: Vec<Expr>| {
        let mut out: Vec<Expr> = Vec::new();
        for e in v {
            if !out.contains(&e) {
                out.push(e);
            }
        }
        out
    };
    let (p, q) = (dedup(p), dedup(q));
    if q.len() == 1 && q[0] != Expr::Const(0.0) {
        let sub = q[0].clone();
        let p = p.into_iter().map(|e| (e - sub.clone()).simplify()).collect();
        return (dedup(p), vec![Expr::Const(0.0)]);
    }
    (p, q)
}

macro_rules! binop {
    ($tr:ident, $m:ident, $var:ident) => {
        impl ops::$tr for Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                Expr::$var(Box::new(self), Box::new(rhs))
            }
        }
        impl ops::$tr<f64> for Expr {
            type Output = Expr;
            fn $m(self, rhs: f64) -> Expr {
                Expr::$var(Box::new(self), Box::new(Expr::Const(rhs)))
            }
        }
        impl ops::$tr<Expr> for f64 {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                Expr::$var(Box::new(Expr::Const(self)), Box::new(rhs))
            }
        }
    };
}
binop!(Add, add, Add);
binop!(Sub, sub, Sub);
binop!(Mul, mul, Mul);
binop!(Div, div, Div);

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, name: &str, v: &[Expr]| -> fmt::Result {
            write!(f, "{name}(")?;
            for (i, e) in v.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{e}")?;
            }
            write!(f, ")")
        };
        match self {
            Expr::Const(c) if *c < 0.0 => write!(f, "({c})"),
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Pow(a, p) => write!(f, "pow({a}, {p})"),
            Expr::Abs(a) => write!(f, "abs({a})"),
            Expr::Max(v) => list(f, "max", v),
            Expr::Min(v) => list(f, "min", v),
        }
    }
}

// ---------------------------------------------------------------------------
// Parser

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>> {
    let b = src.as_bytes();
    let mut i = 0;
    let mut out = Vec::new();
    while i < b.len() {
        let c = b[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_digit() || b[i] == b'.') {
                i += 1;
            }
            if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                let save = i;
                i += 1;
                if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
                    i += 1;
                }
                if i < b.len() && (b[i] as char).is_ascii_digit() {
                    while i < b.len() && (b[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let s = &src[start..i];
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                pos: start,
                msg: format!("bad number '{s}'"),
            })?;
            out.push((start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if "+-*/^(),".contains(c) {
            out.push((i, Tok::Op(c)));
            i += 1;
        } else {
            return Err(Error::Parse {
                pos: i,
                msg: format!("unexpected character '{c}'"),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    len: usize,
    vars: &'a dyn Fn(&str) -> Option<usize>,
}

impl Parser<'_> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        let pos = self.toks.get(self.pos).map_or(self.len, |t| t.0);
        Err(Error::Parse {
            pos,
            msg: msg.into(),
        })
    }

    fn peek_op(&self, c: char) -> bool {
        matches!(self.toks.get(self.pos), Some((_, Tok::Op(o))) if *o == c)
    }

    fn expect_op(&mut self, c: char) -> Result<()> {
        if self.peek_op(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected '{c}'"))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.peek_op('+') {
                self.pos += 1;
                lhs = lhs + self.term()?;
            } else if self.peek_op('-') {
                self.pos += 1;
                lhs = lhs - self.term()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.peek_op('*') {
                self.pos += 1;
                lhs = lhs * self.unary()?;
            } else if self.peek_op('/') {
                self.pos += 1;
                lhs = lhs / self.unary()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek_op('-') {
            self.pos += 1;
            return Ok(-self.unary()?);
        }
        if self.peek_op('+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek_op('^') {
            self.pos += 1;
            let at = self.pos;
            let e = self.unary()?;
            return match e.constant_value() {
                Some(p) => Ok(base.pow(p)),
                None => {
                    self.pos = at;
                    self.err("exponent must be constant")
                }
            };
        }
        Ok(base)
    }

    fn args(&mut self) -> Result<Vec<Expr>> {
        self.expect_op('(')?;
        let mut v = vec![self.expr()?];
        while self.peek_op(',') {
            self.pos += 1;
            v.push(self.expr()?);
        }
        self.expect_op(')')?;
        Ok(v)
    }

    fn atom(&mut self) -> Result<Expr> {
        let Some((_, tok)) = self.toks.get(self.pos).cloned() else {
            return self.err("unexpected end of input");
        };
        match tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Tok::Op('(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_op(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.pos += 1;
                let at = self.pos;
                match name.as_str() {
                    "min" | "max" => {
                        let a = self.args()?;
                        Ok(if name == "min" { Expr::Min(a) } else { Expr::Max(a) })
                    }
                    "abs" | "sqrt" => {
                        let mut a = self.args()?;
                        if a.len() != 1 {
                            self.pos = at;
                            return self.err(format!("{name} takes one argument"));
                        }
                        let e = a.pop().unwrap();
                        Ok(if name == "abs" { e.abs() } else { e.pow(0.5) })
                    }
                    "pow" => {
                        let mut a = self.args()?;
                        if a.len() != 2 {
                            self.pos = at;
                            return self.err("pow takes two arguments");
                        }
                        let p = a.pop().unwrap();
                        match p.constant_value() {
                            Some(p) => Ok(a.pop().unwrap().pow(p)),
                            None => {
                                self.pos = at;
                                self.err("exponent must be constant")
                            }
                        }
                    }
                    "pi" => Ok(Expr::Const(std::f64::consts::PI)),
                    _ => match (self.vars)(&name) {
                        Some(i) => Ok(Expr::Var(i)),
                        None => {
                            self.pos -= 1;
                            self.err(format!("unknown identifier '{name}'"))
                        }
                    },
                }
            }
            Tok::Op(c) => self.err(format!("unexpected '{c}'")),
        }
    }
}

/// Parses with a custom variable resolver.
pub fn parse_with(src: &str, vars: &dyn Fn(&str) -> Option<usize>) -> Result<Expr> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        len: src.len(),
        vars,
    };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(e.simplify())
}

/// Parses an expression in `x1..xn` (one-based in the text, zero-based in the tree).
pub fn parse(src: &str, n: usize) -> Result<Expr> {
    parse_with(src, &|name: &str| {
        let idx: usize = name.strip_prefix('x')?.parse().ok()?;
        (1..=n).contains(&idx).then(|| idx - 1)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_precedence_and_functions() {
        let e = parse("-x1^2 + 2*max(x2, 1, -3) / 4 - abs(x1 - x2)", 2).unwrap();
        let x = [1.5, -0.5];
        let want = -(1.5f64.powi(2)) + 2.0 * 1.0 / 4.0 - 2.0;
        assert!((e.eval(&x) - want).abs() < 1e-15);
        let e = parse("pow(x1, 3) + sqrt(x1) + 1e-3 + 2.5E1", 1).unwrap();
        assert!((e.eval(&[4.0]) - (64.0 + 2.0 + 0.001 + 25.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(parse("x3", 2), Err(Error::Parse { .. })));
        assert!(matches!(parse("x1 +", 1), Err(Error::Parse { .. })));
        assert!(matches!(parse("x1 ^ x1", 1), Err(Error::Parse { .. })));
        assert!(matches!(parse("foo(x1)", 1), Err(Error::Parse { .. })));
        assert!(matches!(parse("(x1", 1), Err(Error::Parse { .. })));
    }

    #[test]
    fn dc_split_reconstructs_the_function() {
        let e = parse("max(x1, -x1) - min(x1^2, x2) + 3*abs(x2 - 1)", 2).unwrap();
        let (p, q) = e.dc_split().unwrap();
        for x in [[0.3, -1.2], [-2.0, 0.5], [1.0, 1.0], [0.0, 0.0]] {
            let mp = p.iter().map(|e| e.eval(&x)).fold(f64::NEG_INFINITY, f64::max);
            let mq = q.iter().map(|e| e.eval(&x)).fold(f64::NEG_INFINITY, f64::max);
            assert!((mp - mq - e.eval(&x)).abs() < 1e-12);
        }
        assert!(parse("x1 * abs(x1)", 1).unwrap().dc_split().is_none());
    }

    #[test]
    fn curvature_flags() {
        assert_eq!(parse("(x1 - 1)^2 + max(x1, 2*x2)", 2).unwrap().curvature(), Curvature::Convex);
        assert_eq!(parse("-abs(x1)", 1).unwrap().curvature(), Curvature::Concave);
        assert_eq!(parse("x1 * x2", 2).unwrap().curvature(), Curvature::Unknown);
        assert!(parse("max(x1, 0) - 2*abs(x1 + x2) + 3", 2).unwrap().is_piecewise_affine());
        assert!(!parse("max(x1^2, 0)", 1).unwrap().is_piecewise_affine());
    }
}
