//! A small expression language for user-defined fibre lifts.
//!
//! Variables are `theta` and `x`; `pi` is a constant; any other identifier
//! must be bound as a named parameter. Operators are `+ - * / ^` (with `^`
//! right associative and binding tighter than unary minus) and the functions
//! `sin cos tan atan exp log abs sqrt`. There are no conditionals.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unbound identifier `{name}` at position {position}")]
    Unbound { name: String, position: usize },
    #[error("unknown function `{name}` at position {position}")]
    UnknownFunction { name: String, position: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("division by zero at theta={theta}, x={x}")]
    DivisionByZero { theta: f64, x: f64 },
    #[error("{function} outside its domain at theta={theta}, x={x}")]
    Domain {
        function: &'static str,
        theta: f64,
        x: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Atan,
    Exp,
    Log,
    Abs,
    Sqrt,
    Sign,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "atan" => Func::Atan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Atan => "atan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Sign => "sign",
        }
    }

    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Atan => v.atan(),
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Abs => v.abs(),
            Func::Sqrt => v.sqrt(),
            Func::Sign => {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Syntax tree with parameters already substituted.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Theta,
    X,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    #[inline]
    pub fn eval(&self, theta: f64, x: f64) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Theta => theta,
            Node::X => x,
            Node::Neg(a) => -a.eval(theta, x),
            Node::Add(a, b) => a.eval(theta, x) + b.eval(theta, x),
            Node::Sub(a, b) => a.eval(theta, x) - b.eval(theta, x),
            Node::Mul(a, b) => a.eval(theta, x) * b.eval(theta, x),
            Node::Div(a, b) => a.eval(theta, x) / b.eval(theta, x),
            Node::Pow(a, b) => pow(a.eval(theta, x), b.eval(theta, x)),
            Node::Call(f, a) => f.apply(a.eval(theta, x)),
        }
    }

    pub fn try_eval(&self, theta: f64, x: f64) -> Result<f64, EvalError> {
        Ok(match self {
            Node::Const(c) => *c,
            Node::Theta => theta,
            Node::X => x,
            Node::Neg(a) => -a.try_eval(theta, x)?,
            Node::Add(a, b) => a.try_eval(theta, x)? + b.try_eval(theta, x)?,
            Node::Sub(a, b) => a.try_eval(theta, x)? - b.try_eval(theta, x)?,
            Node::Mul(a, b) => a.try_eval(theta, x)? * b.try_eval(theta, x)?,
            Node::Div(a, b) => {
                let num = a.try_eval(theta, x)?;
                let den = b.try_eval(theta, x)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero { theta, x });
                }
                num / den
            }
            Node::Pow(a, b) => {
                let v = pow(a.try_eval(theta, x)?, b.try_eval(theta, x)?);
                if v.is_nan() {
                    return Err(EvalError::Domain {
                        function: "^",
                        theta,
                        x,
                    });
                }
                v
            }
            Node::Call(f, a) => {
                let arg = a.try_eval(theta, x)?;
                let bad = match f {
                    Func::Log => arg <= 0.0,
                    Func::Sqrt => arg < 0.0,
                    _ => false,
                };
                if bad {
                    return Err(EvalError::Domain {
                        function: f.name(),
                        theta,
                        x,
                    });
                }
                f.apply(arg)
            }
        })
    }

    pub fn depends_on_x(&self) -> bool {
        match self {
            Node::X => true,
            Node::Const(_) | Node::Theta => false,
            Node::Neg(a) | Node::Call(_, a) => a.depends_on_x(),
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Pow(a, b) => a.depends_on_x() || b.depends_on_x(),
        }
    }

    pub fn depends_on_theta(&self) -> bool {
        match self {
            Node::Theta => true,
            Node::Const(_) | Node::X => false,
            Node::Neg(a) | Node::Call(_, a) => a.depends_on_theta(),
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Pow(a, b) => a.depends_on_theta() || b.depends_on_theta(),
        }
    }

    /// Symbolic ∂/∂x.
    pub fn derivative_x(&self) -> Node {
        use Node::*;
        match self {
            Const(_) | Theta => Const(0.0),
            X => Const(1.0),
            Neg(a) => neg(a.derivative_x()),
            Add(a, b) => add(a.derivative_x(), b.derivative_x()),
            Sub(a, b) => sub(a.derivative_x(), b.derivative_x()),
            Mul(a, b) => add(
                mul(a.derivative_x(), (**b).clone()),
                mul((**a).clone(), b.derivative_x()),
            ),
            Div(a, b) => div(
                sub(
                    mul(a.derivative_x(), (**b).clone()),
                    mul((**a).clone(), b.derivative_x()),
                ),
                Pow(b.clone(), Box::new(Const(2.0))),
            ),
            Pow(a, b) if !b.depends_on_x() => mul(
                mul(
                    (**b).clone(),
                    Pow(a.clone(), Box::new(sub((**b).clone(), Const(1.0)))),
                ),
                a.derivative_x(),
            ),
            Pow(a, b) => mul(
                self.clone(),
                add(
                    mul(b.derivative_x(), Call(Func::Log, a.clone())),
                    div(mul((**b).clone(), a.derivative_x()), (**a).clone()),
                ),
            ),
            Call(f, a) => {
                let inner = a.derivative_x();
                let outer = match f {
                    Func::Sin => Call(Func::Cos, a.clone()),
                    Func::Cos => neg(Call(Func::Sin, a.clone())),
                    Func::Tan => div(
                        Const(1.0),
                        Pow(Box::new(Call(Func::Cos, a.clone())), Box::new(Const(2.0))),
                    ),
                    Func::Atan => div(
                        Const(1.0),
                        add(Const(1.0), Pow(a.clone(), Box::new(Const(2.0)))),
                    ),
                    Func::Exp => self.clone(),
                    Func::Log => div(Const(1.0), (**a).clone()),
                    Func::Abs => Call(Func::Sign, a.clone()),
                    Func::Sqrt => div(Const(0.5), self.clone()),
                    Func::Sign => Const(0.0),
                };
                mul(outer, inner)
            }
        }
    }
}

#[inline]
fn pow(a: f64, b: f64) -> f64 {
    if b == 2.0 {
        a * a
    } else if b.fract() == 0.0 && b.abs() <= 16.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

fn is_const(n: &Node, v: f64) -> bool {
    matches!(n, Node::Const(c) if *c == v)
}

fn neg(a: Node) -> Node {
    match a {
        Node::Const(c) => Node::Const(-c),
        a => Node::Neg(Box::new(a)),
    }
}

fn add(a: Node, b: Node) -> Node {
    match (a, b) {
        (Node::Const(x), Node::Const(y)) => Node::Const(x + y),
        (a, b) if is_const(&a, 0.0) => b,
        (a, b) if is_const(&b, 0.0) => a,
        (a, b) => Node::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Node, b: Node) -> Node {
    match (a, b) {
        (Node::Const(x), Node::Const(y)) => Node::Const(x - y),
        (a, b) if is_const(&b, 0.0) => a,
        (a, b) if is_const(&a, 0.0) => neg(b),
        (a, b) => Node::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Node, b: Node) -> Node {
    match (a, b) {
        (Node::Const(x), Node::Const(y)) => Node::Const(x * y),
        (a, _) if is_const(&a, 0.0) => Node::Const(0.0),
        (_, b) if is_const(&b, 0.0) => Node::Const(0.0),
        (a, b) if is_const(&a, 1.0) => b,
        (a, b) if is_const(&b, 1.0) => a,
        (a, b) => Node::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Node, b: Node) -> Node {
    match (a, b) {
        (a, _) if is_const(&a, 0.0) => Node::Const(0.0),
        (a, b) if is_const(&b, 1.0) => a,
        (a, b) => Node::Div(Box::new(a), Box::new(b)),
    }
}

/// A parsed fibre-lift formula together with its parameter bindings.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ExpressionSource", into = "ExpressionSource")]
pub struct MapExpression {
    source: String,
    parameters: BTreeMap<String, f64>,
    root: Node,
    dx: Node,
}

#[derive(Clone, Serialize, Deserialize)]
struct ExpressionSource {
    source: String,
    #[serde(default)]
    parameters: BTreeMap<String, f64>,
}

impl TryFrom<ExpressionSource> for MapExpression {
    type Error = ExprError;
    fn try_from(s: ExpressionSource) -> Result<Self, ExprError> {
        parse_map_expression(&s.source, &s.parameters)
    }
}

impl From<MapExpression> for ExpressionSource {
    fn from(e: MapExpression) -> Self {
        ExpressionSource {
            source: e.source,
            parameters: e.parameters,
        }
    }
}

impl fmt::Debug for MapExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MapExpression")
            .field("source", &self.source)
            .field("parameters", &self.parameters)
            .finish()
    }
}

impl MapExpression {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn parameters(&self) -> &BTreeMap<String, f64> {
        &self.parameters
    }

    pub fn node(&self) -> &Node {
        &self.root
    }

    /// Fast evaluation; arithmetic faults surface as NaN or ±inf.
    #[inline]
    pub fn eval(&self, theta: f64, x: f64) -> f64 {
        self.root.eval(theta, x)
    }

    /// Evaluation with per-point fault reporting.
    pub fn try_eval(&self, theta: f64, x: f64) -> Result<f64, EvalError> {
        self.root.try_eval(theta, x)
    }

    /// ∂/∂x of the formula at a point.
    #[inline]
    pub fn eval_dx(&self, theta: f64, x: f64) -> f64 {
        self.dx.eval(theta, x)
    }

    pub fn depends_on_x(&self) -> bool {
        self.root.depends_on_x()
    }

    pub fn depends_on_theta(&self) -> bool {
        self.root.depends_on_theta()
    }
}

/// Parses `source` binding the given parameters.
pub fn parse_map_expression(
    source: &str,
    parameters: &BTreeMap<String, f64>,
) -> Result<MapExpression, ExprError> {
    let tokens = tokenize(source)?;
    let mut parser = Parser {
        tokens: &tokens,
        pos: 0,
        params: parameters,
        end: source.len(),
    };
    let root = parser.expr()?;
    if let Some(tok) = parser.peek() {
        return Err(ExprError::Syntax {
            position: tok.pos,
            message: format!("unexpected {}", tok.kind),
        });
    }
    let dx = root.derivative_x();
    Ok(MapExpression {
        source: source.to_string(),
        parameters: parameters.clone(),
        root,
        dx,
    })
}

/// Evaluates a closed formula (no `theta`/`x`), e.g. `(sqrt(5)-1)/2`.
pub fn eval_constant(source: &str) -> Result<f64, ExprError> {
    let e = parse_map_expression(source, &BTreeMap::new())?;
    if e.depends_on_x() || e.depends_on_theta() {
        return Err(ExprError::Syntax {
            position: 0,
            message: "constant expression must not use theta or x".into(),
        });
    }
    Ok(e.eval(0.0, 0.0))
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Num(v) => write!(f, "number {v}"),
            TokenKind::Ident(s) => write!(f, "identifier `{s}`"),
            TokenKind::Op(c) => write!(f, "'{c}'"),
            TokenKind::LParen => write!(f, "'('"),
            TokenKind::RParen => write!(f, "')'"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    pos: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
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
                }
            }
            let text = &src[start..i];
            let v = text.parse::<f64>().map_err(|_| ExprError::Syntax {
                position: start,
                message: format!("malformed number `{text}`"),
            })?;
            out.push(Token {
                kind: TokenKind::Num(v),
                pos: start,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: TokenKind::Ident(src[start..i].to_string()),
                pos: start,
            });
        } else {
            let kind = match c {
                '+' | '-' | '*' | '/' | '^' => TokenKind::Op(c),
                '(' => TokenKind::LParen,
                ')' => TokenKind::RParen,
                _ => {
                    return Err(ExprError::Syntax {
                        position: start,
                        message: format!("unexpected character '{c}'"),
                    })
                }
            };
            out.push(Token { kind, pos: start });
            i += 1;
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    params: &'a BTreeMap<String, f64>,
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::Op(c),
                ..
            }) => Some(*c),
            _ => None,
        }
    }

    fn error_here(&self, what: &str) -> ExprError {
        match self.peek() {
            Some(t) => ExprError::Syntax {
                position: t.pos,
                message: format!("expected {what}, found {}", t.kind),
            },
            None => ExprError::Syntax {
                position: self.end,
                message: format!("expected {what}, found end of input"),
            },
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.error_here("an operand"));
        };
        match tok.kind {
            TokenKind::Num(v) => {
                self.pos += 1;
                Ok(Node::Const(v))
            }
            TokenKind::LParen => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                self.pos += 1;
                if matches!(
                    self.peek(),
                    Some(Token {
                        kind: TokenKind::LParen,
                        ..
                    })
                ) {
                    let func =
                        Func::from_name(&name).ok_or_else(|| ExprError::UnknownFunction {
                            name: name.clone(),
                            position: tok.pos,
                        })?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                match name.as_str() {
                    "theta" => Ok(Node::Theta),
                    "x" => Ok(Node::X),
                    "pi" => Ok(Node::Const(std::f64::consts::PI)),
                    _ => {
                        self.params
                            .get(&name)
                            .map(|&v| Node::Const(v))
                            .ok_or(ExprError::Unbound {
                                name,
                                position: tok.pos,
                            })
                    }
                }
            }
            _ => Err(self.error_here("an operand")),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::RParen,
                ..
            }) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error_here("')'")),
        }
    }
}
