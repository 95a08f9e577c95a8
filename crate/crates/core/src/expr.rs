//! Rational-function expressions over named parameters.
//!
//! Transition probabilities of a parametrized model are written as small
//! arithmetic expressions (`p*(1-q)`, `1/(1+p)`, `p^2`). This module parses
//! them, evaluates them at a [`ParamPoint`], and differentiates them exactly
//! by walking the tree, so downstream derivatives carry no step-size error.
//!
//! Grammar, tightest binding first:
//!
//! ```text
//! primary := number | identifier | '(' expr ')'
//! power   := primary ('^' '-'? integer)*
//! unary   := '-' unary | power
//! term    := unary (('*' | '/') unary)*
//! expr    := term (('+' | '-') term)*
//! ```

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown token {token:?} at byte {offset}")]
    UnknownToken { offset: usize, token: char },
    #[error("division by zero")]
    DivisionByZero,
    #[error("unbound parameter `{0}`")]
    UnboundParameter(String),
    #[error("parameter `{0}` bound more than once")]
    DuplicateParameter(String),
    #[error("parameter `{name}` has non-finite value {value}")]
    NonFinite { name: String, value: f64 },
}

/// Expression tree. Immutable once built; cloning is a deep copy.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Param(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
}

/// Parameter assignment: each name bound once, every value finite.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamPoint {
    names: Vec<String>,
    values: Vec<f64>,
}

impl ParamPoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, S>(pairs: I) -> Result<Self, ExprError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut point = Self::new();
        for (name, value) in pairs {
            point.bind(name, value)?;
        }
        Ok(point)
    }

    /// Adds a new binding; rebinding an existing name is an error.
    pub fn bind(&mut self, name: impl Into<String>, value: f64) -> Result<(), ExprError> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(ExprError::DuplicateParameter(name));
        }
        if !value.is_finite() {
            return Err(ExprError::NonFinite { name, value });
        }
        self.names.push(name);
        self.values.push(value);
        Ok(())
    }

    /// Copy of this point with `name` set to `value` (added if absent).
    pub fn with(&self, name: &str, value: f64) -> Self {
        let mut out = self.clone();
        match out.names.iter().position(|n| n == name) {
            Some(i) => out.values[i] = value,
            None => {
                out.names.push(name.to_string());
                out.values.push(value);
            }
        }
        out
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().copied())
    }
}

/// Number type an expression can be evaluated over. `f64` is the everyday
/// instance; dual-number types let callers get exact higher derivatives.
pub trait Scalar:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(c: f64) -> Self;
    /// Real part, used for the division-by-zero check.
    fn real(&self) -> f64;
}

impl Scalar for f64 {
    fn from_f64(c: f64) -> Self {
        c
    }
    fn real(&self) -> f64 {
        *self
    }
}

impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    pub fn param(name: impl Into<String>) -> Self {
        Expr::Param(name.into())
    }

    pub fn powi(self, n: i32) -> Self {
        Expr::Pow(Box::new(self), n)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    pub fn depends_on(&self, name: &str) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Param(p) => p == name,
            Expr::Neg(a) | Expr::Pow(a, _) => a.depends_on(name),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on(name) || b.depends_on(name)
            }
        }
    }

    /// Names of all parameters referenced, in first-appearance order.
    pub fn parameters(&self) -> Vec<String> {
        fn walk(e: &Expr, out: &mut Vec<String>) {
            match e {
                Expr::Const(_) => {}
                Expr::Param(p) => {
                    if !out.contains(p) {
                        out.push(p.clone());
                    }
                }
                Expr::Neg(a) | Expr::Pow(a, _) => walk(a, out),
                Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    pub fn eval(&self, point: &ParamPoint) -> Result<f64, ExprError> {
        self.eval_with(&|name| point.get(name))
    }

    /// Evaluates over any [`Scalar`], resolving parameters through `lookup`.
    pub fn eval_with<T: Scalar>(&self, lookup: &dyn Fn(&str) -> Option<T>) -> Result<T, ExprError> {
        Ok(match self {
            Expr::Const(c) => T::from_f64(*c),
            Expr::Param(p) => lookup(p).ok_or_else(|| ExprError::UnboundParameter(p.clone()))?,
            Expr::Neg(a) => -a.eval_with(lookup)?,
            Expr::Add(a, b) => a.eval_with(lookup)? + b.eval_with(lookup)?,
            Expr::Sub(a, b) => a.eval_with(lookup)? - b.eval_with(lookup)?,
            Expr::Mul(a, b) => a.eval_with(lookup)? * b.eval_with(lookup)?,
            Expr::Div(a, b) => {
                let num = a.eval_with(lookup)?;
                let den = b.eval_with(lookup)?;
                if den.real() == 0.0 {
                    return Err(ExprError::DivisionByZero);
                }
                num / den
            }
            Expr::Pow(a, n) => {
                let base = a.eval_with(lookup)?;
                let mut acc = T::from_f64(1.0);
                for _ in 0..n.unsigned_abs() {
                    acc = acc * base.clone();
                }
                if *n < 0 {
                    if acc.real() == 0.0 {
                        return Err(ExprError::DivisionByZero);
                    }
                    T::from_f64(1.0) / acc
                } else {
                    acc
                }
            }
        })
    }

    /// Exact partial derivative with respect to `name`.
    pub fn diff(&self, name: &str) -> Expr {
        if !self.depends_on(name) {
            return Expr::Const(0.0);
        }
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Param(_) => Expr::Const(1.0),
            Expr::Neg(a) => -a.diff(name),
            Expr::Add(a, b) => a.diff(name) + b.diff(name),
            Expr::Sub(a, b) => a.diff(name) - b.diff(name),
            Expr::Mul(a, b) => {
                a.diff(name) * (**b).clone() + (**a).clone() * b.diff(name)
            }
            Expr::Div(a, b) => {
                let num = a.diff(name) * (**b).clone() - (**a).clone() * b.diff(name);
                num / (**b).clone().powi(2)
            }
            Expr::Pow(a, n) => match n {
                0 => Expr::Const(0.0),
                1 => a.diff(name),
                _ => Expr::Const(f64::from(*n)) * (**a).clone().powi(n - 1) * a.diff(name),
            },
        }
    }
}

// Builders fold literal zeros and ones so derivative trees stay readable.
impl Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        if self.is_zero() {
            rhs
        } else if rhs.is_zero() {
            self
        } else {
            Expr::Add(Box::new(self), Box::new(rhs))
        }
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        if rhs.is_zero() {
            self
        } else if self.is_zero() {
            -rhs
        } else {
            Expr::Sub(Box::new(self), Box::new(rhs))
        }
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        if self.is_zero() || rhs.is_zero() {
            Expr::Const(0.0)
        } else if self == Expr::Const(1.0) {
            rhs
        } else if rhs == Expr::Const(1.0) {
            self
        } else {
            Expr::Mul(Box::new(self), Box::new(rhs))
        }
    }
}

impl Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        if rhs == Expr::Const(1.0) {
            self
        } else {
            Expr::Div(Box::new(self), Box::new(rhs))
        }
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        match self {
            Expr::Const(0.0) => Expr::Const(0.0),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Self {
        Expr::Const(c)
    }
}

/// Fully parenthesized rendering; `parse_expr` reads it back unchanged.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) if c.is_sign_negative() => write!(f, "(-{:?})", -c),
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Param(p) => f.write_str(p),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, n) => write!(f, "({a}^{n})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Int(i64),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            let mut is_int = !text[start..i].contains('.');
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                    is_int = false;
                }
            }
            let lit = &text[start..i];
            let value: f64 = lit.parse().map_err(|_| ExprError::Syntax {
                offset: start,
                message: format!("malformed number `{lit}`"),
            })?;
            let tok = match lit.parse::<i64>() {
                Ok(n) if is_int => Tok::Int(n),
                _ => Tok::Num(value),
            };
            out.push((start, tok));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(text[start..i].to_string())));
        } else if "+-*/^".contains(c) {
            out.push((i, Tok::Op(c)));
            i += 1;
        } else if c == '(' {
            out.push((i, Tok::LParen));
            i += 1;
        } else if c == ')' {
            out.push((i, Tok::RParen));
            i += 1;
        } else {
            let token = text[i..].chars().next().unwrap_or(c);
            return Err(ExprError::UnknownToken { offset: i, token });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let mut base = self.primary()?;
        while let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let negative = if let Some(Tok::Op('-')) = self.peek() {
                self.pos += 1;
                true
            } else {
                false
            };
            let n = match self.peek() {
                Some(Tok::Int(n)) => *n,
                _ => return self.err("exponent must be an integer literal"),
            };
            let n = if negative { -n } else { n };
            let n = i32::try_from(n).or_else(|_| self.err("exponent out of range"))?;
            self.pos += 1;
            base = Expr::Pow(Box::new(base), n);
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Some(Tok::Int(n)) => {
                self.pos += 1;
                Ok(Expr::Const(n as f64))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                Ok(Expr::Param(name))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                match self.peek() {
                    Some(Tok::RParen) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => self.err("expected `)`"),
                }
            }
            Some(tok) => self.err(format!("unexpected {tok:?}")),
            None => self.err("unexpected end of input"),
        }
    }
}

/// Parses an arithmetic expression over constants and parameter names.
pub fn parse_expr(text: &str) -> Result<Expr, ExprError> {
    let toks = tokenize(text)?;
    let mut parser = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    let expr = parser.expr()?;
    if parser.pos != parser.toks.len() {
        return parser.err("trailing input");
    }
    Ok(expr)
}
