//! Reaction terms `c(x, u)` and `d(x, u)` given as closed-form expressions.
//!
//! Components are parsed from strings like `u1^3 - u1 + sin(2*pi*x)`,
//! validated, and differentiated symbolically so that Jacobians are exact.
//! Supported syntax: `+ - * / ^` (integer powers), unary minus, `x`,
//! components `u1..un`, `pi`, and `sin cos exp tanh step`. Two restrictions
//! keep models C^1 in `u` by construction: denominators and `step`
//! arguments must not involve `u`.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::matrix::SquareMat;
use crate::{Error, Result};

/// Expression tree over `x` and `u1..un`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    X,
    /// Zero-based component index; `u1` parses to `U(0)`.
    U(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
    Tanh(Box<Expr>),
    /// Heaviside step: 1 for nonnegative argument, 0 otherwise.
    Step(Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x: f64, u: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::X => x,
            Expr::U(i) => u[*i],
            Expr::Neg(a) => -a.eval(x, u),
            Expr::Add(a, b) => a.eval(x, u) + b.eval(x, u),
            Expr::Sub(a, b) => a.eval(x, u) - b.eval(x, u),
            Expr::Mul(a, b) => a.eval(x, u) * b.eval(x, u),
            Expr::Div(a, b) => a.eval(x, u) / b.eval(x, u),
            Expr::Pow(a, k) => math::powi(a.eval(x, u), *k),
            Expr::Sin(a) => math::sin(a.eval(x, u)),
            Expr::Cos(a) => math::cos(a.eval(x, u)),
            Expr::Exp(a) => math::exp(a.eval(x, u)),
            Expr::Tanh(a) => math::tanh(a.eval(x, u)),
            Expr::Step(a) => {
                if a.eval(x, u) >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn contains_u(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::X => false,
            Expr::U(_) => true,
            Expr::Neg(a)
            | Expr::Pow(a, _)
            | Expr::Sin(a)
            | Expr::Cos(a)
            | Expr::Exp(a)
            | Expr::Tanh(a)
            | Expr::Step(a) => a.contains_u(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.contains_u() || b.contains_u()
            }
        }
    }

    fn max_u_index(&self) -> Option<usize> {
        match self {
            Expr::Const(_) | Expr::X => None,
            Expr::U(i) => Some(*i),
            Expr::Neg(a)
            | Expr::Pow(a, _)
            | Expr::Sin(a)
            | Expr::Cos(a)
            | Expr::Exp(a)
            | Expr::Tanh(a)
            | Expr::Step(a) => a.max_u_index(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                match (a.max_u_index(), b.max_u_index()) {
                    (Some(i), Some(j)) => Some(i.max(j)),
                    (i, j) => i.or(j),
                }
            }
        }
    }

    /// Rejects denominators and `step` arguments that depend on `u`.
    fn check_u_smoothness(&self) -> core::result::Result<(), &'static str> {
        match self {
            Expr::Const(_) | Expr::X | Expr::U(_) => Ok(()),
            Expr::Neg(a)
            | Expr::Pow(a, _)
            | Expr::Sin(a)
            | Expr::Cos(a)
            | Expr::Exp(a)
            | Expr::Tanh(a) => a.check_u_smoothness(),
            Expr::Step(a) => {
                if a.contains_u() {
                    Err("step argument must not depend on u")
                } else {
                    Ok(())
                }
            }
            Expr::Div(a, b) => {
                if b.contains_u() {
                    Err("denominator must not depend on u")
                } else {
                    a.check_u_smoothness()?;
                    b.check_u_smoothness()
                }
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                a.check_u_smoothness()?;
                b.check_u_smoothness()
            }
        }
    }

    /// Symbolic partial derivative with respect to component `j`.
    pub fn diff_u(&self, j: usize) -> Expr {
        match self {
            Expr::Const(_) | Expr::X | Expr::Step(_) => Expr::Const(0.0),
            Expr::U(i) => Expr::Const(if *i == j { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.diff_u(j)),
            Expr::Add(a, b) => add(a.diff_u(j), b.diff_u(j)),
            Expr::Sub(a, b) => sub(a.diff_u(j), b.diff_u(j)),
            Expr::Mul(a, b) => add(
                mul(a.diff_u(j), (**b).clone()),
                mul((**a).clone(), b.diff_u(j)),
            ),
            // Denominators are u-free by validation.
            Expr::Div(a, b) => div(a.diff_u(j), (**b).clone()),
            Expr::Pow(a, k) => {
                if *k == 0 {
                    Expr::Const(0.0)
                } else {
                    mul(
                        mul(Expr::Const(*k as f64), powc((**a).clone(), *k - 1)),
                        a.diff_u(j),
                    )
                }
            }
            Expr::Sin(a) => mul(Expr::Cos(a.clone()), a.diff_u(j)),
            Expr::Cos(a) => neg(mul(Expr::Sin(a.clone()), a.diff_u(j))),
            Expr::Exp(a) => mul(Expr::Exp(a.clone()), a.diff_u(j)),
            Expr::Tanh(a) => mul(
                sub(Expr::Const(1.0), Expr::Pow(Box::new(Expr::Tanh(a.clone())), 2)),
                a.diff_u(j),
            ),
        }
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        (Expr::Const(z), b) if z == 0.0 => b,
        (a, Expr::Const(z)) if z == 0.0 => a,
        (a, b) => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        (a, Expr::Const(z)) if z == 0.0 => a,
        (Expr::Const(z), b) if z == 0.0 => neg(b),
        (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        (Expr::Const(z), _) | (_, Expr::Const(z)) if z == 0.0 => Expr::Const(0.0),
        (Expr::Const(o), b) if o == 1.0 => b,
        (a, Expr::Const(o)) if o == 1.0 => a,
        (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(z), _) if z == 0.0 => Expr::Const(0.0),
        (a, Expr::Const(o)) if o == 1.0 => a,
        (a, b) => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(x) => Expr::Const(-x),
        Expr::Neg(inner) => *inner,
        a => Expr::Neg(Box::new(a)),
    }
}

fn powc(a: Expr, k: u32) -> Expr {
    match k {
        0 => Expr::Const(1.0),
        1 => a,
        _ => Expr::Pow(Box::new(a), k),
    }
}

// Printing with minimal parentheses; `parse_expr(e.to_string())` returns the
// same tree when constants are nonnegative.
const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

impl Expr {
    fn prec(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => PREC_ADD,
            Expr::Mul(..) | Expr::Div(..) => PREC_MUL,
            Expr::Neg(..) => PREC_NEG,
            Expr::Pow(..) => PREC_POW,
            _ => PREC_ATOM,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let wrap = self.prec() < min;
        if wrap {
            f.write_str("(")?;
        }
        match self {
            Expr::Const(c) => write!(f, "{c}")?,
            Expr::X => f.write_str("x")?,
            Expr::U(i) => write!(f, "u{}", i + 1)?,
            Expr::Neg(a) => {
                f.write_str("-")?;
                a.fmt_prec(f, PREC_NEG)?;
            }
            Expr::Add(a, b) => {
                a.fmt_prec(f, PREC_ADD)?;
                f.write_str(" + ")?;
                b.fmt_prec(f, PREC_ADD + 1)?;
            }
            Expr::Sub(a, b) => {
                a.fmt_prec(f, PREC_ADD)?;
                f.write_str(" - ")?;
                b.fmt_prec(f, PREC_ADD + 1)?;
            }
            Expr::Mul(a, b) => {
                a.fmt_prec(f, PREC_MUL)?;
                f.write_str("*")?;
                b.fmt_prec(f, PREC_MUL + 1)?;
            }
            Expr::Div(a, b) => {
                a.fmt_prec(f, PREC_MUL)?;
                f.write_str("/")?;
                b.fmt_prec(f, PREC_MUL + 1)?;
            }
            Expr::Pow(a, k) => {
                a.fmt_prec(f, PREC_ATOM)?;
                write!(f, "^{k}")?;
            }
            Expr::Sin(a) => write!(f, "sin({a})")?,
            Expr::Cos(a) => write!(f, "cos({a})")?,
            Expr::Exp(a) => write!(f, "exp({a})")?,
            Expr::Tanh(a) => write!(f, "tanh({a})")?,
            Expr::Step(a) => write!(f, "step({a})")?,
        }
        if wrap {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' => {
                toks.push((Tok::Plus, i));
                i += 1;
            }
            b'-' => {
                toks.push((Tok::Minus, i));
                i += 1;
            }
            b'*' => {
                toks.push((Tok::Star, i));
                i += 1;
            }
            b'/' => {
                toks.push((Tok::Slash, i));
                i += 1;
            }
            b'^' => {
                toks.push((Tok::Caret, i));
                i += 1;
            }
            b'(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let v: f64 = src[start..i].parse().map_err(|_| Error::Parse {
                    offset: start,
                    expected: "number".to_string(),
                })?;
                toks.push((Tok::Num(v), start));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push((Tok::Ident(src[start..i].to_string()), start));
            }
            _ => {
                return Err(Error::Parse {
                    offset: i,
                    expected: "operator, number, or identifier".to_string(),
                })
            }
        }
    }
    Ok(toks)
}

struct Parser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(_, o)| *o).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn err(&self, expected: &str) -> Error {
        Error::Parse { offset: self.offset(), expected: expected.to_string() }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Tok::Slash) => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Tok::Caret)) {
            self.bump();
            let off = self.offset();
            match self.bump() {
                Some(Tok::Num(v)) if v >= 0.0 && math::fract(v) == 0.0 && v <= u32::MAX as f64 => {
                    Ok(Expr::Pow(Box::new(base), v as u32))
                }
                _ => Err(Error::Parse {
                    offset: off,
                    expected: "nonnegative integer exponent".to_string(),
                }),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        let off = self.offset();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                match self.bump() {
                    Some(Tok::RParen) => Ok(e),
                    _ => Err(Error::Parse {
                        offset: self.toks.get(self.pos - 1).map(|(_, o)| *o).unwrap_or(self.end),
                        expected: "closing parenthesis".to_string(),
                    }),
                }
            }
            Some(Tok::Ident(name)) => match name.as_str() {
                "x" => Ok(Expr::X),
                "pi" => Ok(Expr::Const(core::f64::consts::PI)),
                "sin" | "cos" | "exp" | "tanh" | "step" => {
                    if !matches!(self.peek(), Some(Tok::LParen)) {
                        return Err(self.err("opening parenthesis after function name"));
                    }
                    self.bump();
                    let arg = Box::new(self.expr()?);
                    match self.bump() {
                        Some(Tok::RParen) => Ok(match name.as_str() {
                            "sin" => Expr::Sin(arg),
                            "cos" => Expr::Cos(arg),
                            "exp" => Expr::Exp(arg),
                            "tanh" => Expr::Tanh(arg),
                            _ => Expr::Step(arg),
                        }),
                        _ => Err(Error::Parse {
                            offset: self.toks.get(self.pos - 1).map(|(_, o)| *o).unwrap_or(self.end),
                            expected: "closing parenthesis".to_string(),
                        }),
                    }
                }
                _ if name.starts_with('u') && name[1..].chars().all(|c| c.is_ascii_digit()) => {
                    let idx: usize = name[1..].parse().map_err(|_| Error::Parse {
                        offset: off,
                        expected: "component index after u".to_string(),
                    })?;
                    if idx == 0 {
                        return Err(Error::Parse {
                            offset: off,
                            expected: "component index >= 1".to_string(),
                        });
                    }
                    Ok(Expr::U(idx - 1))
                }
                _ => Err(Error::Parse {
                    offset: off,
                    expected: "x, u<k>, pi, or a function name".to_string(),
                }),
            },
            _ => Err(Error::Parse { offset: off, expected: "operand".to_string() }),
        }
    }
}

/// Parses one expression; the whole input must be consumed.
pub fn parse_expr(src: &str) -> Result<Expr> {
    let toks = lex(src)?;
    let mut p = Parser { toks: &toks, pos: 0, end: src.len() };
    let e = p.expr()?;
    if p.pos != toks.len() {
        return Err(p.err("end of input"));
    }
    Ok(e)
}

/// The reaction part of the problem: component expressions for `c` and `d`,
/// their exact Jacobians in `u`, and declared breakpoints of the forcing.
#[derive(Debug, Clone)]
pub struct NonlinearModel {
    n: usize,
    c: Vec<Expr>,
    d: Vec<Expr>,
    dc_du: Vec<Expr>,
    dd_du: Vec<Expr>,
    x_breakpoints: Vec<f64>,
}

impl NonlinearModel {
    pub fn new<S: AsRef<str>>(
        n: usize,
        c: &[S],
        d: &[S],
        x_breakpoints: Vec<f64>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid { detail: "system dimension must be positive".into() });
        }
        if c.len() != n || d.len() != n {
            return Err(Error::Invalid {
                detail: format!("expected {n} components for c and d, got {} and {}", c.len(), d.len()),
            });
        }
        let parse_all = |srcs: &[S]| -> Result<Vec<Expr>> {
            srcs.iter().map(|s| parse_expr(s.as_ref())).collect()
        };
        let c = parse_all(c)?;
        let d = parse_all(d)?;
        for e in c.iter().chain(d.iter()) {
            if let Some(i) = e.max_u_index() {
                if i >= n {
                    return Err(Error::Invalid {
                        detail: format!("component u{} exceeds system dimension n = {n}", i + 1),
                    });
                }
            }
            e.check_u_smoothness().map_err(|m| Error::Invalid { detail: m.into() })?;
        }
        for &b in &x_breakpoints {
            if !(0.0..=1.0).contains(&b) || !b.is_finite() {
                return Err(Error::Invalid {
                    detail: format!("x breakpoint {b} outside [0,1]"),
                });
            }
        }
        let mut x_breakpoints = x_breakpoints;
        x_breakpoints.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
        x_breakpoints.dedup();
        let jac = |rows: &[Expr]| -> Vec<Expr> {
            let mut out = Vec::with_capacity(n * n);
            for e in rows {
                for j in 0..n {
                    out.push(e.diff_u(j));
                }
            }
            out
        };
        let dc_du = jac(&c);
        let dd_du = jac(&d);
        Ok(Self { n, c, d, dc_du, dd_du, x_breakpoints })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn x_breakpoints(&self) -> &[f64] {
        &self.x_breakpoints
    }

    /// True when either reaction term depends on `u`.
    pub fn depends_on_u(&self) -> bool {
        self.c.iter().chain(self.d.iter()).any(Expr::contains_u)
    }

    fn eval_rows(&self, rows: &[Expr], x: f64, u: &[f64], out: &mut [f64]) -> Result<()> {
        for (k, e) in rows.iter().enumerate() {
            let v = e.eval(x, u);
            if !v.is_finite() {
                return Err(Error::Eval { x, u: u.to_vec(), component: k });
            }
            out[k] = v;
        }
        Ok(())
    }

    pub fn eval_c(&self, x: f64, u: &[f64], out: &mut [f64]) -> Result<()> {
        self.eval_rows(&self.c, x, u, out)
    }

    pub fn eval_d(&self, x: f64, u: &[f64], out: &mut [f64]) -> Result<()> {
        self.eval_rows(&self.d, x, u, out)
    }

    fn eval_jac(&self, table: &[Expr], x: f64, u: &[f64]) -> Result<SquareMat> {
        let mut m = SquareMat::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let v = table[i * self.n + j].eval(x, u);
                if !v.is_finite() {
                    return Err(Error::Eval { x, u: u.to_vec(), component: i });
                }
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    /// Exact Jacobian of `c` in `u`.
    pub fn jac_c(&self, x: f64, u: &[f64]) -> Result<SquareMat> {
        self.eval_jac(&self.dc_du, x, u)
    }

    /// Exact Jacobian of `d` in `u`.
    pub fn jac_d(&self, x: f64, u: &[f64]) -> Result<SquareMat> {
        self.eval_jac(&self.dd_du, x, u)
    }

    /// Max entrywise gap between the symbolic Jacobians and central
    /// differences with step `h`; used to cross-check the differentiation.
    pub fn fd_jacobian_check(&self, x: f64, u: &[f64], h: f64) -> Result<f64> {
        let mut worst = 0.0f64;
        for (rows, table) in [(&self.c, &self.dc_du), (&self.d, &self.dd_du)] {
            let jac = self.eval_jac(table, x, u)?;
            let mut up = u.to_vec();
            let mut lo = vec![0.0; self.n];
            let mut hi = vec![0.0; self.n];
            for j in 0..self.n {
                up.copy_from_slice(u);
                up[j] = u[j] + h;
                self.eval_rows(rows, x, &up, &mut hi)?;
                up[j] = u[j] - h;
                self.eval_rows(rows, x, &up, &mut lo)?;
                for i in 0..self.n {
                    let fd = (hi[i] - lo[i]) / (2.0 * h);
                    worst = worst.max((fd - jac.get(i, j)).abs());
                }
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_reports_offset_of_missing_operand() {
        match parse_expr("u1 +") {
            Err(Error::Parse { offset, expected }) => {
                assert_eq!(offset, 4);
                assert_eq!(expected, "operand");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_unknown_identifier_and_bad_power() {
        assert!(matches!(parse_expr("y + 1"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(parse_expr("u1^x"), Err(Error::Parse { offset: 3, .. })));
        assert!(matches!(parse_expr("u0"), Err(Error::Parse { .. })));
        assert!(matches!(parse_expr("sin x"), Err(Error::Parse { .. })));
        assert!(matches!(parse_expr("(1 + x"), Err(Error::Parse { .. })));
    }

    #[test]
    fn eval_matches_hand_computation() {
        let e = parse_expr("u1^3 - u1 + sin(2*pi*x)").unwrap();
        let v = e.eval(0.25, &[2.0]);
        assert!((v - 7.0).abs() < 1e-12);

        let e = parse_expr("step(x - 0.5)*3 + tanh(0)").unwrap();
        assert_eq!(e.eval(0.25, &[]), 0.0);
        assert_eq!(e.eval(0.75, &[]), 3.0);
        assert_eq!(e.eval(0.5, &[]), 3.0);
    }

    #[test]
    fn precedence_is_conventional() {
        let e = parse_expr("-x^2 + 2*3").unwrap();
        assert_eq!(e.eval(2.0, &[]), 2.0);
        let e = parse_expr("1 - 2 - 3").unwrap();
        assert_eq!(e.eval(0.0, &[]), -4.0);
        let e = parse_expr("8/4/2").unwrap();
        assert_eq!(e.eval(0.0, &[]), 1.0);
    }

    #[test]
    fn symbolic_jacobian_of_cubic() {
        let m = NonlinearModel::new(1, &["0"], &["u1^3 - u1"], vec![]).unwrap();
        let j = m.jac_d(0.0, &[2.0]).unwrap();
        assert!((j.get(0, 0) - 11.0).abs() < 1e-12);
        assert!(m.depends_on_u());
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let linear = NonlinearModel::new(
            2,
            &["2*u1 + 0.5*u2", "u2 - x*u1"],
            &["u1 + 3*u2", "0.25*u1"],
            vec![],
        )
        .unwrap();
        assert!(linear.fd_jacobian_check(0.3, &[0.7, -0.2], 1e-4).unwrap() < 1e-11);

        let cubic = NonlinearModel::new(1, &["u1^3"], &["u1^3 - u1 + sin(2*pi*x)"], vec![])
            .unwrap();
        assert!(cubic.fd_jacobian_check(0.6, &[0.8], 1e-5).unwrap() < 1e-8);

        let smooth = NonlinearModel::new(
            2,
            &["sin(u1*u2)", "exp(u1 - u2)"],
            &["tanh(u1) + cos(u2)", "u1*u2^2"],
            vec![],
        )
        .unwrap();
        assert!(smooth.fd_jacobian_check(0.1, &[0.4, 0.9], 1e-5).unwrap() < 1e-7);
    }

    #[test]
    fn model_validates_dimensions_and_denominators() {
        assert!(matches!(
            NonlinearModel::new(1, &["u2"], &["0"], vec![]),
            Err(Error::Invalid { .. })
        ));
        assert!(matches!(
            NonlinearModel::new(1, &["1/u1"], &["0"], vec![]),
            Err(Error::Invalid { .. })
        ));
        assert!(matches!(
            NonlinearModel::new(1, &["step(u1)"], &["0"], vec![]),
            Err(Error::Invalid { .. })
        ));
        assert!(NonlinearModel::new(1, &["x/(1 + x^2)"], &["0"], vec![]).is_ok());
        assert!(matches!(
            NonlinearModel::new(1, &["0"], &["0"], vec![1.5]),
            Err(Error::Invalid { .. })
        ));
    }

    #[test]
    fn display_round_trips_through_parser() {
        for src in [
            "u1^3 - u1 + sin(2*pi*x)",
            "-(x + u1)*exp(x)",
            "1 - 2 - 3",
            "8/4/2",
            "(x + 1)^2",
            "step(x - 0.5)/(2 + x)",
        ] {
            let e = parse_expr(src).unwrap();
            let printed = alloc::string::ToString::to_string(&e);
            let re = parse_expr(&printed).unwrap();
            assert_eq!(e, re, "{src} -> {printed}");
        }
    }
}
