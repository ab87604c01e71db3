//! Slowly varying coefficient profiles c(τ), a(τ).
//!
//! A profile is parsed from a small expression language over the variable
//! `tau`, and its derivatives are built once by symbolic differentiation.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_DERIVATIVE: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        match s {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "tanh" => Some(Func::Tanh),
            _ => None,
        }
    }
}

/// Expression tree over the single variable `tau`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Tau,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

fn num(v: f64) -> Expr {
    Expr::Num(v)
}

impl Expr {
    fn as_num(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn eval(&self, tau: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Tau => tau,
            Expr::Neg(a) => -a.eval(tau),
            Expr::Add(a, b) => a.eval(tau) + b.eval(tau),
            Expr::Sub(a, b) => a.eval(tau) - b.eval(tau),
            Expr::Mul(a, b) => a.eval(tau) * b.eval(tau),
            Expr::Div(a, b) => a.eval(tau) / b.eval(tau),
            Expr::Pow(a, n) => a.eval(tau).powi(*n),
            Expr::Call(f, a) => {
                let x = a.eval(tau);
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Tanh => x.tanh(),
                }
            }
        }
    }

    // Smart constructors folding constants and trivial identities.
    fn neg(a: Expr) -> Expr {
        match a {
            Expr::Num(v) => num(-v),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }

    fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) => num(x + y),
            (Some(0.0), _) => b,
            (_, Some(0.0)) => a,
            _ => match b {
                Expr::Neg(inner) => Expr::Sub(Box::new(a), inner),
                b => Expr::Add(Box::new(a), Box::new(b)),
            },
        }
    }

    fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) => num(x - y),
            (Some(0.0), _) => Expr::neg(b),
            (_, Some(0.0)) => a,
            _ => match b {
                Expr::Neg(inner) => Expr::Add(Box::new(a), inner),
                b => Expr::Sub(Box::new(a), Box::new(b)),
            },
        }
    }

    fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) => num(x * y),
            (Some(0.0), _) => num(0.0),
            (_, Some(0.0)) => num(0.0),
            (Some(1.0), _) => b,
            (_, Some(1.0)) => a,
            (Some(-1.0), _) => Expr::neg(b),
            (_, Some(-1.0)) => Expr::neg(a),
            (None, Some(_)) => Expr::Mul(Box::new(b), Box::new(a)),
            _ => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_num(), b.as_num()) {
            (Some(0.0), _) => num(0.0),
            (_, Some(1.0)) => a,
            _ => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    fn pow(a: Expr, n: i32) -> Expr {
        match (a.as_num(), n) {
            (_, 0) => num(1.0),
            (_, 1) => a,
            (Some(x), n) => num(x.powi(n)),
            (None, n) => Expr::Pow(Box::new(a), n),
        }
    }

    fn call(f: Func, a: Expr) -> Expr {
        Expr::Call(f, Box::new(a))
    }

    /// Symbolic derivative with respect to `tau`.
    pub fn derivative(&self) -> Expr {
        match self {
            Expr::Num(_) => num(0.0),
            Expr::Tau => num(1.0),
            Expr::Neg(a) => Expr::neg(a.derivative()),
            Expr::Add(a, b) => Expr::add(a.derivative(), b.derivative()),
            Expr::Sub(a, b) => Expr::sub(a.derivative(), b.derivative()),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.derivative(), (**b).clone()),
                Expr::mul((**a).clone(), b.derivative()),
            ),
            Expr::Div(a, b) => {
                let da = a.derivative();
                let db = b.derivative();
                if db.as_num() == Some(0.0) {
                    return Expr::div(da, (**b).clone());
                }
                Expr::div(
                    Expr::sub(Expr::mul(da, (**b).clone()), Expr::mul((**a).clone(), db)),
                    Expr::pow((**b).clone(), 2),
                )
            }
            Expr::Pow(a, n) => Expr::mul(
                Expr::mul(num(*n as f64), Expr::pow((**a).clone(), n - 1)),
                a.derivative(),
            ),
            Expr::Call(f, a) => {
                let inner = (**a).clone();
                let outer = match f {
                    Func::Sin => Expr::call(Func::Cos, inner),
                    Func::Cos => Expr::neg(Expr::call(Func::Sin, inner)),
                    Func::Exp => Expr::call(Func::Exp, inner),
                    Func::Tanh => Expr::sub(num(1.0), Expr::pow(Expr::call(Func::Tanh, inner), 2)),
                };
                Expr::mul(outer, a.derivative())
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            Expr::Num(v) if *v < 0.0 => 3,
            _ => 5,
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if e.precedence() < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Tau => write!(f, "tau"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                write_operand(f, a, 4)
            }
            Expr::Add(a, b) => {
                write_operand(f, a, 1)?;
                write!(f, " + ")?;
                write_operand(f, b, 2)
            }
            Expr::Sub(a, b) => {
                write_operand(f, a, 1)?;
                write!(f, " - ")?;
                write_operand(f, b, 2)
            }
            Expr::Mul(a, b) => {
                write_operand(f, a, 2)?;
                write!(f, "*")?;
                write_operand(f, b, 3)
            }
            Expr::Div(a, b) => {
                write_operand(f, a, 2)?;
                write!(f, "/")?;
                write_operand(f, b, 3)
            }
            Expr::Pow(a, n) => {
                write_operand(f, a, 5)?;
                if *n < 0 {
                    write!(f, "^({n})")
                } else {
                    write!(f, "^{n}")
                }
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn err<T>(&self, offset: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            offset,
            message: message.into(),
        })
    }

    fn expect(&mut self, ch: u8) -> Result<()> {
        match self.peek() {
            Some(c) if c == ch => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => self.err(self.pos, format!("expected `{}`, found `{}`", ch as char, c as char)),
            None => self.err(self.pos, format!("expected `{}`, found end of input", ch as char)),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
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
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() != Some(b'^') {
            return Ok(base);
        }
        self.pos += 1;
        let paren = self.peek() == Some(b'(');
        if paren {
            self.pos += 1;
        }
        self.skip_ws();
        let start = self.pos;
        if matches!(self.bytes.get(self.pos), Some(b'-') | Some(b'+')) {
            self.pos += 1;
        }
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if matches!(self.bytes.get(self.pos), Some(b'.') | Some(b'e') | Some(b'E')) {
            return self.err(start, "exponent must be an integer literal");
        }
        let text = &self.src[start..self.pos];
        let n: i32 = match text.parse() {
            Ok(n) => n,
            Err(_) => return self.err(start, "exponent must be an integer literal"),
        };
        if paren {
            self.expect(b')')?;
        }
        Ok(Expr::Pow(Box::new(base), n))
    }

    fn atom(&mut self) -> Result<Expr> {
        let Some(c) = self.peek() else {
            return self.err(self.pos, "unexpected end of input");
        };
        let start = self.pos;
        if c == b'(' {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(b')')?;
            return Ok(e);
        }
        if c.is_ascii_digit() || c == b'.' {
            return self.number();
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while self.pos < self.bytes.len()
                && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
            {
                self.pos += 1;
            }
            let name = &self.src[start..self.pos];
            if let Some(func) = Func::from_name(name) {
                self.expect(b'(')?;
                let arg = self.expr()?;
                self.expect(b')')?;
                return Ok(Expr::Call(func, Box::new(arg)));
            }
            return match name {
                "tau" => Ok(Expr::Tau),
                "pi" => Ok(num(std::f64::consts::PI)),
                "e" => Ok(num(std::f64::consts::E)),
                _ => Err(Error::UnknownIdentifier {
                    name: name.to_string(),
                    offset: start,
                }),
            };
        }
        self.err(start, format!("unexpected character `{}`", c as char))
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_digit() || b[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < b.len() && (b[self.pos] == b'e' || b[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < b.len() && (b[self.pos] == b'+' || b[self.pos] == b'-') {
                self.pos += 1;
            }
            if self.pos < b.len() && b[self.pos].is_ascii_digit() {
                while self.pos < b.len() && b[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        match self.src[start..self.pos].parse::<f64>() {
            Ok(v) => Ok(num(v)),
            Err(_) => self.err(start, "malformed number"),
        }
    }
}

/// Parse an expression string into a tree.
pub fn parse_expr(text: &str) -> Result<Expr> {
    let mut p = Parser::new(text);
    if p.peek().is_none() {
        return p.err(p.pos, "empty expression");
    }
    let e = p.expr()?;
    if let Some(c) = p.peek() {
        return p.err(p.pos, format!("unexpected trailing `{}`", c as char));
    }
    Ok(e)
}

/// A smooth profile together with its symbolic derivatives.
#[derive(Debug, Clone)]
pub struct SlowProfile {
    derivs: Arc<Vec<Expr>>,
    pub max_derivative: usize,
    pub label: String,
}

impl SlowProfile {
    pub fn expression(&self) -> &Expr {
        &self.derivs[0]
    }

    pub fn derivative_expr(&self, q: usize) -> Option<&Expr> {
        self.derivs.get(q)
    }

    pub fn eval(&self, tau: f64, q: usize) -> Result<f64> {
        match self.derivs.get(q) {
            Some(e) => Ok(e.eval(tau)),
            None => Err(Error::DerivativeOrder {
                order: q,
                max: self.max_derivative,
            }),
        }
    }

    /// Value and first derivative, the pair needed in the hot paths.
    #[inline]
    pub fn value(&self, tau: f64) -> f64 {
        self.derivs[0].eval(tau)
    }

    #[inline]
    pub fn rate(&self, tau: f64) -> f64 {
        self.derivs[1].eval(tau)
    }

    pub fn constant(v: f64, label: &str) -> SlowProfile {
        SlowProfile::from_expr(num(v), DEFAULT_MAX_DERIVATIVE, label)
    }

    pub fn from_expr(e: Expr, max_derivative: usize, label: &str) -> SlowProfile {
        let mut derivs = Vec::with_capacity(max_derivative + 1);
        derivs.push(e);
        for q in 0..max_derivative {
            let d = derivs[q].derivative();
            derivs.push(d);
        }
        SlowProfile {
            derivs: Arc::new(derivs),
            max_derivative,
            label: label.to_string(),
        }
    }
}

pub fn parse_profile(text: &str) -> Result<SlowProfile> {
    parse_profile_labeled(text, text, DEFAULT_MAX_DERIVATIVE)
}

pub fn parse_profile_labeled(text: &str, label: &str, max_derivative: usize) -> Result<SlowProfile> {
    if max_derivative < 2 {
        return Err(Error::InvalidArgument("max_derivative must be at least 2".into()));
    }
    Ok(SlowProfile::from_expr(parse_expr(text)?, max_derivative, label))
}

pub fn eval_profile(p: &SlowProfile, tau: f64, q: usize) -> Result<f64> {
    p.eval(tau, q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub label: String,
    pub min: f64,
    pub argmin: f64,
    pub c0: f64,
    /// max |p^{(q)}| over the samples for q = 0, 1, 2
    pub max_abs: [f64; 3],
    pub passed: bool,
}

/// Dense-sampling positivity check on [0, horizon].
pub fn validate_profile(p: &SlowProfile, horizon: f64, c0: f64, samples: usize) -> Result<ValidationReport> {
    if samples < 2 || !(horizon > 0.0) {
        return Err(Error::InvalidArgument(
            "validation needs samples >= 2 and horizon > 0".into(),
        ));
    }
    let mut min = f64::INFINITY;
    let mut argmin = 0.0;
    let mut max_abs = [0.0f64; 3];
    for i in 0..samples {
        let tau = horizon * i as f64 / (samples - 1) as f64;
        for (q, slot) in max_abs.iter_mut().enumerate() {
            let v = p.eval(tau, q)?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    label: p.label.clone(),
                    tau,
                });
            }
            if q == 0 && v < min {
                min = v;
                argmin = tau;
            }
            *slot = slot.max(v.abs());
        }
    }
    Ok(ValidationReport {
        label: p.label.clone(),
        min,
        argmin,
        c0,
        max_abs,
        passed: min >= c0,
    })
}

/// The problem data shared by the solver and the expansions.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub dimension: usize,
    pub lengths: Vec<f64>,
    pub speed: SlowProfile,
    pub coupling: SlowProfile,
    pub epsilon: f64,
    pub c0: f64,
}

impl ProblemSpec {
    pub fn new(
        lengths: Vec<f64>,
        speed: SlowProfile,
        coupling: SlowProfile,
        epsilon: f64,
        c0: f64,
    ) -> Result<ProblemSpec> {
        let d = lengths.len();
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidArgument(format!("dimension {d} not in 1..=3")));
        }
        if lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument("lengths must be positive".into()));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon} not in (0,1)")));
        }
        if !(c0 > 0.0) {
            return Err(Error::InvalidArgument("c0 must be positive".into()));
        }
        Ok(ProblemSpec {
            dimension: d,
            lengths,
            speed,
            coupling,
            epsilon,
            c0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_profile_has_zero_derivatives() {
        let p = parse_profile("1").unwrap();
        assert_eq!(p.eval(0.3, 0).unwrap(), 1.0);
        for q in 1..=6 {
            assert_eq!(p.eval(0.3, q).unwrap(), 0.0);
        }
    }

    #[test]
    fn sine_profile_derivative() {
        let p = parse_profile("1 + 0.5*sin(tau)").unwrap();
        assert_eq!(p.eval(0.0, 0).unwrap(), 1.0);
        assert_eq!(p.eval(0.0, 1).unwrap(), 0.5);
        assert_eq!(p.derivative_expr(1).unwrap().to_string(), "0.5*cos(tau)");
    }

    #[test]
    fn exp_second_derivative() {
        let p = parse_profile("exp(tau)").unwrap();
        assert!((p.eval(1.0, 2).unwrap() - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn syntax_error_offset() {
        match parse_profile("1 +") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_profile("1 + foo(tau)"),
            Err(Error::UnknownIdentifier { offset: 4, .. })
        ));
        assert!(matches!(parse_profile("tau^1.5"), Err(Error::Syntax { offset: 4, .. })));
        assert!(parse_profile("").is_err());
        assert!(parse_profile("(1 + tau").is_err());
    }

    #[test]
    fn order_beyond_max_is_refused() {
        let p = parse_profile("sin(tau)").unwrap();
        assert!(matches!(
            p.eval(0.0, 7),
            Err(Error::DerivativeOrder { order: 7, max: 6 })
        ));
    }

    #[test]
    fn precedence() {
        let p = parse_profile("-tau^2 + 2*3 - 4/2/2").unwrap();
        assert_eq!(p.eval(3.0, 0).unwrap(), -9.0 + 6.0 - 1.0);
        let p = parse_profile("2^(-2) * (1 + tau)^3").unwrap();
        assert_eq!(p.eval(1.0, 0).unwrap(), 2.0);
        assert_eq!(p.eval(1.0, 1).unwrap(), 3.0);
        let p = parse_profile("1.5e-1*pi + e").unwrap();
        assert!((p.value(0.0) - (0.15 * std::f64::consts::PI + std::f64::consts::E)).abs() < 1e-15);
    }

    #[test]
    fn validate_examples() {
        let p = parse_profile("1 + 0.5*sin(tau)").unwrap();
        let r = validate_profile(&p, 10.0, 0.4, 10_001).unwrap();
        assert!(r.passed);
        assert!((r.min - 0.5).abs() < 1e-6);

        let p = parse_profile("sin(tau)").unwrap();
        let r = validate_profile(&p, 10.0, 0.1, 1000).unwrap();
        assert!(!r.passed);
        assert!(r.min <= 0.0);

        let p = parse_profile("1/(tau - 1)").unwrap();
        assert!(matches!(
            validate_profile(&p, 2.0, 0.1, 3),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn validate_tanh_against_dense_oracle() {
        let p = parse_profile("2 + tanh(tau)").unwrap();
        let r = validate_profile(&p, 5.0, 1.0, 1000).unwrap();
        let oracle = (0..100_000)
            .map(|i| 2.0 + (5.0 * i as f64 / 99_999.0).tanh())
            .fold(f64::INFINITY, f64::min);
        assert!(r.passed);
        assert_eq!(r.min, oracle);
        assert_eq!(r.min, 2.0);
        assert_eq!(r.argmin, 0.0);
    }

    const SAMPLE_EXPRS: &[&str] = &[
        "1 + 0.5*sin(tau)",
        "2 + tanh(tau)",
        "exp(-tau)*cos(3*tau)",
        "1/(2 + sin(tau))",
        "(1 + 0.1*tau)^3 - tau^(-1)",
        "tanh(sin(tau))*exp(0.2*tau)",
        "cos(tau)^2 + sin(tau)^2",
    ];

    fn fd(p: &SlowProfile, tau: f64, q: usize) -> f64 {
        let h = 1e-5;
        (p.eval(tau + h, q - 1).unwrap() - p.eval(tau - h, q - 1).unwrap()) / (2.0 * h)
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(idx in 0usize..7, tau in 0.5f64..3.0) {
            let p = parse_profile(SAMPLE_EXPRS[idx]).unwrap();
            for q in 1..=2 {
                let exact = p.eval(tau, q).unwrap();
                let approx = fd(&p, tau, q);
                let scale = exact.abs().max(1.0);
                prop_assert!((exact - approx).abs() <= 1e-6 * scale,
                    "q={} exact={} fd={}", q, exact, approx);
            }
        }

        #[test]
        fn print_reparse_round_trip(idx in 0usize..7, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let p = parse_profile(SAMPLE_EXPRS[idx]).unwrap();
            for q in 0..=3 {
                let e = p.derivative_expr(q).unwrap();
                let back = parse_expr(&e.to_string()).unwrap();
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..100 {
                    let tau: f64 = rng.gen_range(0.1..5.0);
                    let a = e.eval(tau);
                    let b = back.eval(tau);
                    prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-300) || a == b,
                        "{} vs {}", a, b);
                }
            }
        }
    }
}
