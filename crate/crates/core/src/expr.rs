//! Expression parsing, evaluation, and forward-mode differentiation.
//!
//! Expressions are written over the reserved identifiers `t`, `x1`..`xN`,
//! and `gamma`, with `+ - * / ^`, unary minus, and the functions `exp`,
//! `ln`, `sin`, `cos`, `sqrt`. `^` binds tighter than unary minus and is
//! right-associative; everything else is left-associative.
//!
//! Derivatives are exact forward-mode duals, one evaluation pass per
//! variable. An [`Expression`] is immutable after parse and safe to share
//! across threads.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{EvalError, ParseError};

/// A variable an expression may reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Var {
    /// Time `t`.
    T,
    /// State coordinate `xi` (1-based index).
    X(usize),
    /// Jump mark `gamma`.
    Gamma,
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::T => write!(f, "t"),
            Var::X(i) => write!(f, "x{i}"),
            Var::Gamma => write!(f, "gamma"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Func {
    Exp,
    Ln,
    Sin,
    Cos,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Const(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// Values bound to the expression variables for one evaluation.
#[derive(Clone, Copy, Debug)]
pub struct Bindings<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub gamma: Option<f64>,
}

impl<'a> Bindings<'a> {
    /// Bindings for a (t, x) point with no jump mark.
    pub fn state(t: f64, x: &'a [f64]) -> Self {
        Self { t, x, gamma: None }
    }

    /// Bindings for a (t, x, gamma) point.
    pub fn with_gamma(t: f64, x: &'a [f64], gamma: f64) -> Self {
        Self {
            t,
            x,
            gamma: Some(gamma),
        }
    }
}

/// Value and first derivatives of an expression at one binding point.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub value: f64,
    pub dt: f64,
    pub dx: Vec<f64>,
    /// Present iff the bindings carried a gamma value.
    pub dgamma: Option<f64>,
}

/// A parsed expression over `t`, `x1`..`xN`, `gamma`.
#[derive(Clone, Debug)]
pub struct Expression {
    n: usize,
    root: Node,
    vars: BTreeSet<Var>,
}

impl Expression {
    /// Parse `source` for a state space of dimension `n` (n >= 2).
    pub fn parse(source: &str, n: usize) -> Result<Self, ParseError> {
        if n < 2 {
            return Err(ParseError::new(
                1,
                format!("state dimension must be at least 2, got {n}"),
            ));
        }
        if source.trim().is_empty() {
            return Err(ParseError::new(1, "empty expression"));
        }
        let mut parser = Parser::new(source, n);
        let root = parser.parse_expr()?;
        parser.expect_end()?;
        let mut vars = BTreeSet::new();
        collect_vars(&root, &mut vars);
        Ok(Self { n, root, vars })
    }

    /// A constant expression (no variables).
    pub fn constant(value: f64, n: usize) -> Self {
        Self {
            n,
            root: Node::Const(value),
            vars: BTreeSet::new(),
        }
    }

    /// State dimension this expression was parsed for.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Exactly the variables appearing in the source text.
    pub fn variables(&self) -> &BTreeSet<Var> {
        &self.vars
    }

    pub fn references(&self, var: Var) -> bool {
        self.vars.contains(&var)
    }

    /// True if the expression references any state coordinate.
    pub fn references_state(&self) -> bool {
        self.vars.iter().any(|v| matches!(v, Var::X(_)))
    }

    /// Evaluate at `b`. Non-finite results are reported as domain errors.
    pub fn evaluate(&self, b: &Bindings) -> Result<f64, EvalError> {
        self.check_bindings(b)?;
        Ok(eval(&self.root, b, None)?.v)
    }

    /// Value and exact derivative with respect to a single variable.
    pub fn derivative(&self, b: &Bindings, var: Var) -> Result<(f64, f64), EvalError> {
        self.check_bindings(b)?;
        let d = eval(&self.root, b, Some(var))?;
        Ok((d.v, d.d))
    }

    /// Value plus derivatives with respect to `t`, every `xi`, and `gamma`
    /// when the bindings carry one. One forward pass per referenced
    /// variable; unreferenced variables get an exact zero.
    pub fn gradient(&self, b: &Bindings) -> Result<Gradient, EvalError> {
        self.check_bindings(b)?;
        let value = eval(&self.root, b, None)?.v;
        let dt = if self.references(Var::T) {
            eval(&self.root, b, Some(Var::T))?.d
        } else {
            0.0
        };
        let mut dx = vec![0.0; self.n];
        for i in 1..=self.n {
            if self.references(Var::X(i)) {
                dx[i - 1] = eval(&self.root, b, Some(Var::X(i)))?.d;
            }
        }
        let dgamma = match b.gamma {
            Some(_) if self.references(Var::Gamma) => {
                Some(eval(&self.root, b, Some(Var::Gamma))?.d)
            }
            Some(_) => Some(0.0),
            None => None,
        };
        Ok(Gradient {
            value,
            dt,
            dx,
            dgamma,
        })
    }

    fn check_bindings(&self, b: &Bindings) -> Result<(), EvalError> {
        if b.x.len() != self.n {
            return Err(EvalError::StateLength {
                expected: self.n,
                got: b.x.len(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for Expression {
    /// Canonical fully-parenthesized form; re-parsing it yields an
    /// identical tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, f)
    }
}

fn write_node(node: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match node {
        Node::Const(c) => write!(f, "{c:?}"),
        Node::Var(v) => write!(f, "{v}"),
        Node::Neg(e) => {
            write!(f, "(-")?;
            write_node(e, f)?;
            write!(f, ")")
        }
        Node::Bin(op, a, b) => {
            write!(f, "(")?;
            write_node(a, f)?;
            write!(f, " {} ", op.symbol())?;
            write_node(b, f)?;
            write!(f, ")")
        }
        Node::Call(func, e) => {
            write!(f, "{}(", func.name())?;
            write_node(e, f)?;
            write!(f, ")")
        }
    }
}

fn collect_vars(node: &Node, out: &mut BTreeSet<Var>) {
    match node {
        Node::Const(_) => {}
        Node::Var(v) => {
            out.insert(*v);
        }
        Node::Neg(e) | Node::Call(_, e) => collect_vars(e, out),
        Node::Bin(_, a, b) => {
            collect_vars(a, out);
            collect_vars(b, out);
        }
    }
}

// ---------------------------------------------------------------------------
// Dual-number evaluation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
struct Dual {
    v: f64,
    d: f64,
}

impl Dual {
    fn finite(self, op: &str) -> Result<Dual, EvalError> {
        if self.v.is_finite() && self.d.is_finite() {
            Ok(self)
        } else {
            Err(EvalError::Domain(format!("non-finite result in {op}")))
        }
    }
}

fn eval(node: &Node, b: &Bindings, seed: Option<Var>) -> Result<Dual, EvalError> {
    match node {
        Node::Const(c) => Ok(Dual { v: *c, d: 0.0 }),
        Node::Var(var) => {
            let v = match var {
                Var::T => b.t,
                Var::X(i) => b.x[*i - 1],
                Var::Gamma => b
                    .gamma
                    .ok_or_else(|| EvalError::UnboundVariable("gamma".into()))?,
            };
            let d = if seed == Some(*var) { 1.0 } else { 0.0 };
            Ok(Dual { v, d })
        }
        Node::Neg(e) => {
            let a = eval(e, b, seed)?;
            Ok(Dual { v: -a.v, d: -a.d })
        }
        Node::Bin(op, lhs, rhs) => {
            let a = eval(lhs, b, seed)?;
            let c = eval(rhs, b, seed)?;
            match op {
                BinOp::Add => Dual {
                    v: a.v + c.v,
                    d: a.d + c.d,
                }
                .finite("+"),
                BinOp::Sub => Dual {
                    v: a.v - c.v,
                    d: a.d - c.d,
                }
                .finite("-"),
                BinOp::Mul => Dual {
                    v: a.v * c.v,
                    d: a.d * c.v + a.v * c.d,
                }
                .finite("*"),
                BinOp::Div => {
                    if c.v == 0.0 {
                        return Err(EvalError::Domain("division by zero".into()));
                    }
                    Dual {
                        v: a.v / c.v,
                        d: (a.d * c.v - a.v * c.d) / (c.v * c.v),
                    }
                    .finite("/")
                }
                BinOp::Pow => pow(a, c),
            }
        }
        Node::Call(func, e) => {
            let a = eval(e, b, seed)?;
            match func {
                Func::Exp => {
                    let v = a.v.exp();
                    Dual { v, d: v * a.d }.finite("exp")
                }
                Func::Ln => {
                    if a.v <= 0.0 {
                        return Err(EvalError::Domain(format!(
                            "ln of non-positive value {}",
                            a.v
                        )));
                    }
                    Dual {
                        v: a.v.ln(),
                        d: a.d / a.v,
                    }
                    .finite("ln")
                }
                Func::Sin => Dual {
                    v: a.v.sin(),
                    d: a.v.cos() * a.d,
                }
                .finite("sin"),
                Func::Cos => Dual {
                    v: a.v.cos(),
                    d: -a.v.sin() * a.d,
                }
                .finite("cos"),
                Func::Sqrt => {
                    if a.v < 0.0 {
                        return Err(EvalError::Domain(format!(
                            "sqrt of negative value {}",
                            a.v
                        )));
                    }
                    let v = a.v.sqrt();
                    let d = if a.d == 0.0 { 0.0 } else { a.d / (2.0 * v) };
                    Dual { v, d }.finite("sqrt")
                }
            }
        }
    }
}

/// Real-valued `a^b`: negative base requires an integer, variable-free
/// exponent; `0^b` requires b > 0.
fn pow(a: Dual, b: Dual) -> Result<Dual, EvalError> {
    if a.v < 0.0 {
        if b.d != 0.0 {
            return Err(EvalError::Domain(
                "power with negative base and variable exponent".into(),
            ));
        }
        if b.v.fract() != 0.0 {
            return Err(EvalError::Domain(format!(
                "negative base {} with non-integer exponent {}",
                a.v, b.v
            )));
        }
        let v = a.v.powf(b.v);
        let d = b.v * a.v.powf(b.v - 1.0) * a.d;
        return Dual { v, d }.finite("^");
    }
    if a.v == 0.0 {
        if b.v <= 0.0 {
            return Err(EvalError::Domain(format!(
                "zero base with non-positive exponent {}",
                b.v
            )));
        }
        let d = if b.v > 1.0 || a.d == 0.0 {
            0.0
        } else if b.v == 1.0 {
            a.d
        } else {
            return Err(EvalError::Domain(format!(
                "non-finite derivative of 0^{}",
                b.v
            )));
        };
        return Ok(Dual { v: 0.0, d });
    }
    let v = a.v.powf(b.v);
    let d = v * (b.d * a.v.ln() + b.v * a.d / a.v);
    Dual { v, d }.finite("^")
}

// ---------------------------------------------------------------------------
// Recursive-descent parser
// ---------------------------------------------------------------------------

struct Parser {
    chars: Vec<char>,
    pos: usize, // 0-based index into chars
    n: usize,
}

impl Parser {
    fn new(source: &str, n: usize) -> Self {
        Self {
            chars: source.chars().collect(),
            pos: 0,
            n,
        }
    }

    /// 1-based character position for error reporting.
    fn here(&self) -> usize {
        self.pos + 1
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, expected: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(expected) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, expected: char) -> Result<(), ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c == expected => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => Err(ParseError::new(
                self.here(),
                format!("expected `{expected}`, found `{c}`"),
            )),
            None => Err(ParseError::new(
                self.here(),
                format!("expected `{expected}`, found end of input"),
            )),
        }
    }

    fn expect_end(&mut self) -> Result<(), ParseError> {
        self.skip_ws();
        match self.peek() {
            None => Ok(()),
            Some(c) => Err(ParseError::new(
                self.here(),
                format!("unexpected trailing input starting at `{c}`"),
            )),
        }
    }

    fn parse_expr(&mut self) -> Result<Node, ParseError> {
        let mut node = self.parse_term()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some('+') => {
                    self.pos += 1;
                    let rhs = self.parse_term()?;
                    node = Node::Bin(BinOp::Add, Box::new(node), Box::new(rhs));
                }
                Some('-') => {
                    self.pos += 1;
                    let rhs = self.parse_term()?;
                    node = Node::Bin(BinOp::Sub, Box::new(node), Box::new(rhs));
                }
                _ => return Ok(node),
            }
        }
    }

    fn parse_term(&mut self) -> Result<Node, ParseError> {
        let mut node = self.parse_unary()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some('*') => {
                    self.pos += 1;
                    let rhs = self.parse_unary()?;
                    node = Node::Bin(BinOp::Mul, Box::new(node), Box::new(rhs));
                }
                Some('/') => {
                    self.pos += 1;
                    let rhs = self.parse_unary()?;
                    node = Node::Bin(BinOp::Div, Box::new(node), Box::new(rhs));
                }
                _ => return Ok(node),
            }
        }
    }

    fn parse_unary(&mut self) -> Result<Node, ParseError> {
        if self.eat('-') {
            let inner = self.parse_unary()?;
            return Ok(Node::Neg(Box::new(inner)));
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<Node, ParseError> {
        let base = self.parse_atom()?;
        if self.eat('^') {
            // Right-associative; the exponent may carry its own unary minus.
            let exponent = self.parse_unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn parse_atom(&mut self) -> Result<Node, ParseError> {
        self.skip_ws();
        match self.peek() {
            None => Err(ParseError::new(self.here(), "unexpected end of input")),
            Some('(') => {
                self.pos += 1;
                let inner = self.parse_expr()?;
                self.expect(')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.parse_number(),
            Some(c) if c.is_ascii_alphabetic() => self.parse_identifier(),
            Some(c) => Err(ParseError::new(
                self.here(),
                format!("unexpected character `{c}`"),
            )),
        }
    }

    fn parse_number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.peek() == Some('.') {
            self.pos += 1;
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        // Exponent only when followed by [+-]?digit, so `2exp(t)` does not
        // lex `2e` as a number.
        if matches!(self.peek(), Some('e') | Some('E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some('+') | Some('-')) {
                self.pos += 1;
            }
            if matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = mark;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse::<f64>()
            .map(Node::Const)
            .map_err(|_| ParseError::new(start + 1, format!("invalid number `{text}`")))
    }

    fn parse_identifier(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        let name: String = self.chars[start..self.pos].iter().collect();
        let at = start + 1;
        match name.as_str() {
            "t" => Ok(Node::Var(Var::T)),
            "gamma" => Ok(Node::Var(Var::Gamma)),
            "exp" | "ln" | "sin" | "cos" | "sqrt" => {
                let func = match name.as_str() {
                    "exp" => Func::Exp,
                    "ln" => Func::Ln,
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    _ => Func::Sqrt,
                };
                self.expect('(')?;
                let arg = self.parse_expr()?;
                self.expect(')')?;
                Ok(Node::Call(func, Box::new(arg)))
            }
            _ => {
                if let Some(index_text) = name.strip_prefix('x') {
                    if !index_text.is_empty() && index_text.bytes().all(|b| b.is_ascii_digit()) {
                        let index: usize = index_text.parse().map_err(|_| {
                            ParseError::new(at, format!("invalid state index `{name}`"))
                        })?;
                        if index == 0 || index > self.n {
                            return Err(ParseError::new(
                                at,
                                format!(
                                    "state index out of range: `{name}` with n={}",
                                    self.n
                                ),
                            ));
                        }
                        return Ok(Node::Var(Var::X(index)));
                    }
                }
                Err(ParseError::new(at, format!("unknown identifier `{name}`")))
            }
        }
    }
}
