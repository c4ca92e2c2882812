//! A small expression language for kernels `Φ(y)` and matrix entries `a_ij(y)`.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?              (right associative)
//! primary := number | 'pi' | 'y' digits | 'nrm' '(' 'y' ')'
//!          | ('exp' | 'abs') '(' expr ')'
//!          | ('min' | 'max') '(' expr ',' expr ')'
//!          | 'chi' '(' bound ',' bound ')' '(' expr ')'
//!          | '(' expr ')'
//! bound   := 'inf' | '-' 'inf' | expr
//! ```
//!
//! `^` binds tighter than unary minus, which binds tighter than `*` and `/`, so
//! `-2^2 = -4`. `chi(a,b)(s)` is the indicator of the open interval `a < s < b`.

use std::fmt;

use thiserror::Error;

const MAX_DEPTH: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("`{name}` at byte {offset} takes {expected} argument(s), got {found}")]
    Arity { name: String, offset: usize, expected: usize, found: usize },
    #[error("domain error in `{expr}`: {reason}")]
    Domain { expr: String, reason: String },
    #[error("point has dimension {found}, expression expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Abs,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Exp | Func::Abs => 1,
            Func::Min | Func::Max => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bound {
    NegInf,
    PosInf,
    At(Box<Node>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    /// Zero-based coordinate index: `y1` is `Var(0)`.
    Var(usize),
    Norm,
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
    Chi {
        lo: Bound,
        hi: Bound,
        arg: Box<Node>,
    },
}

/// A parsed expression over `y ∈ ℝⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    dim: usize,
    root: Node,
}

impl Expr {
    pub fn parse(text: &str, dim: usize) -> Result<Expr, ExprError> {
        parse_expr(text, dim)
    }

    pub fn constant(dim: usize, value: f64) -> Expr {
        Expr { dim, root: Node::Num(value) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn eval(&self, y: &[f64]) -> Result<f64, ExprError> {
        eval_expr(self, y)
    }

    /// True when the expression depends on `y` only through `nrm(y)`.
    pub fn is_radial(&self) -> bool {
        fn walk(node: &Node) -> bool {
            match node {
                Node::Num(_) | Node::Norm => true,
                Node::Var(_) => false,
                Node::Neg(a) => walk(a),
                Node::Bin(_, a, b) => walk(a) && walk(b),
                Node::Call(_, args) => args.iter().all(walk),
                Node::Chi { lo, hi, arg } => bound_radial(lo) && bound_radial(hi) && walk(arg),
            }
        }
        fn bound_radial(b: &Bound) -> bool {
            match b {
                Bound::At(n) => walk(n),
                _ => true,
            }
        }
        walk(&self.root)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::NegInf => write!(f, "-inf"),
            Bound::PosInf => write!(f, "inf"),
            Bound::At(n) => write!(f, "{n}"),
        }
    }
}

/// Fully parenthesised rendering; re-parsing it yields an equivalent tree.
impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => write!(f, "(-{})", -v),
            Node::Num(v) => write!(f, "{v}"),
            Node::Var(i) => write!(f, "y{}", i + 1),
            Node::Norm => write!(f, "nrm(y)"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Bin(op, a, b) => write!(f, "({a}{}{b})", op.symbol()),
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
            Node::Chi { lo, hi, arg } => write!(f, "chi({lo},{hi})({arg})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn next(&mut self) -> Result<(Tok, usize), ExprError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        if start >= bytes.len() {
            return Ok((Tok::End, start));
        }
        let c = bytes[start];
        if c.is_ascii_digit() || c == b'.' {
            let mut end = start;
            while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
                end += 1;
            }
            if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                let mut exp_end = end + 1;
                if exp_end < bytes.len() && (bytes[exp_end] == b'+' || bytes[exp_end] == b'-') {
                    exp_end += 1;
                }
                if exp_end < bytes.len() && bytes[exp_end].is_ascii_digit() {
                    while exp_end < bytes.len() && bytes[exp_end].is_ascii_digit() {
                        exp_end += 1;
                    }
                    end = exp_end;
                }
            }
            let text = &self.src[start..end];
            let value: f64 = text
                .parse()
                .map_err(|_| ExprError::Syntax { offset: start, message: format!("malformed number `{text}`") })?;
            if !value.is_finite() {
                return Err(ExprError::Syntax { offset: start, message: format!("number `{text}` is out of range") });
            }
            self.pos = end;
            return Ok((Tok::Num(value), start));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let mut end = start;
            while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
                end += 1;
            }
            self.pos = end;
            return Ok((Tok::Ident(self.src[start..end].to_string()), start));
        }
        if b"+-*/^(),".contains(&c) {
            self.pos += 1;
            return Ok((Tok::Sym(c as char), start));
        }
        let ch = self.src[start..].chars().next().unwrap_or('?');
        Err(ExprError::Syntax { offset: start, message: format!("unexpected character `{ch}`") })
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    at: usize,
    dim: usize,
    depth: usize,
}

impl<'a> Parser<'a> {
    fn advance(&mut self) -> Result<(), ExprError> {
        let (tok, at) = self.lexer.next()?;
        self.tok = tok;
        self.at = at;
        Ok(())
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax { offset: self.at, message: message.into() })
    }

    fn expect(&mut self, c: char) -> Result<(), ExprError> {
        if self.tok == Tok::Sym(c) {
            self.advance()
        } else {
            self.syntax(format!("expected `{c}`"))
        }
    }

    fn enter(&mut self) -> Result<(), ExprError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return self.syntax("expression nested too deeply");
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        self.enter()?;
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => break,
            };
            self.advance()?;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.tok {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => break,
            };
            self.advance()?;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.tok == Tok::Sym('-') {
            self.enter()?;
            self.advance()?;
            let inner = self.unary()?;
            self.depth -= 1;
            return Ok(Node::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.primary()?;
        if self.tok == Tok::Sym('^') {
            self.enter()?;
            self.advance()?;
            let exponent = self.unary()?;
            self.depth -= 1;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn args(&mut self, name: &str, offset: usize, expected: usize) -> Result<Vec<Node>, ExprError> {
        self.expect('(')?;
        let mut args = vec![self.expr()?];
        while self.tok == Tok::Sym(',') {
            self.advance()?;
            args.push(self.expr()?);
        }
        self.expect(')')?;
        if args.len() != expected {
            return Err(ExprError::Arity { name: name.to_string(), offset, expected, found: args.len() });
        }
        Ok(args)
    }

    fn bound(&mut self) -> Result<Bound, ExprError> {
        if self.tok == Tok::Ident("inf".into()) {
            self.advance()?;
            return Ok(Bound::PosInf);
        }
        if self.tok == Tok::Sym('-') {
            let save = (self.lexer.pos, self.tok.clone(), self.at);
            self.advance()?;
            if self.tok == Tok::Ident("inf".into()) {
                self.advance()?;
                return Ok(Bound::NegInf);
            }
            self.lexer.pos = save.0;
            self.tok = save.1;
            self.at = save.2;
        }
        Ok(Bound::At(Box::new(self.expr()?)))
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        let offset = self.at;
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Node::Num(v))
            }
            Tok::Sym('(') => {
                self.advance()?;
                let inner = self.expr()?;
                self.expect(')')?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.advance()?;
                self.identifier(name, offset)
            }
            Tok::End => self.syntax("unexpected end of input"),
            Tok::Sym(c) => self.syntax(format!("unexpected `{c}`")),
        }
    }

    fn identifier(&mut self, name: String, offset: usize) -> Result<Node, ExprError> {
        if name == "pi" {
            return Ok(Node::Num(std::f64::consts::PI));
        }
        if name == "nrm" {
            self.expect('(')?;
            if self.tok != Tok::Ident("y".into()) {
                return self.syntax("nrm takes the variable `y`");
            }
            self.advance()?;
            if self.tok == Tok::Sym(',') {
                return Err(ExprError::Arity { name, offset, expected: 1, found: 2 });
            }
            self.expect(')')?;
            return Ok(Node::Norm);
        }
        if name == "chi" {
            self.expect('(')?;
            let lo = self.bound()?;
            if self.tok != Tok::Sym(',') {
                return Err(ExprError::Arity { name, offset, expected: 2, found: 1 });
            }
            self.advance()?;
            let hi = self.bound()?;
            if self.tok == Tok::Sym(',') {
                return Err(ExprError::Arity { name, offset, expected: 2, found: 3 });
            }
            self.expect(')')?;
            self.expect('(')?;
            let arg = self.expr()?;
            self.expect(')')?;
            return Ok(Node::Chi { lo, hi, arg: Box::new(arg) });
        }
        if let Some(func) = Func::lookup(&name) {
            let args = self.args(&name, offset, func.arity())?;
            return Ok(Node::Call(func, args));
        }
        if let Some(digits) = name.strip_prefix('y') {
            if let Ok(i) = digits.parse::<usize>() {
                if i >= 1 && i <= self.dim && !digits.starts_with('0') {
                    return Ok(Node::Var(i - 1));
                }
            }
        }
        Err(ExprError::UnknownIdentifier { name, offset })
    }
}

pub fn parse_expr(text: &str, dim: usize) -> Result<Expr, ExprError> {
    if dim == 0 {
        return Err(ExprError::DimensionMismatch { expected: 1, found: 0 });
    }
    let mut parser = Parser { lexer: Lexer { src: text, pos: 0 }, tok: Tok::End, at: 0, dim, depth: 0 };
    parser.advance()?;
    let root = parser.expr()?;
    if parser.tok != Tok::End {
        return parser.syntax("unexpected trailing input");
    }
    Ok(Expr { dim, root })
}

pub fn eval_expr(e: &Expr, y: &[f64]) -> Result<f64, ExprError> {
    if y.len() != e.dim {
        return Err(ExprError::DimensionMismatch { expected: e.dim, found: y.len() });
    }
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    eval_node(&e.root, y, norm)
}

fn domain(node: &Node, reason: &str) -> ExprError {
    ExprError::Domain { expr: node.to_string(), reason: reason.to_string() }
}

fn eval_node(node: &Node, y: &[f64], norm: f64) -> Result<f64, ExprError> {
    let value = match node {
        Node::Num(v) => *v,
        Node::Var(i) => y[*i],
        Node::Norm => norm,
        Node::Neg(a) => -eval_node(a, y, norm)?,
        Node::Bin(op, a, b) => {
            let lhs = eval_node(a, y, norm)?;
            let rhs = eval_node(b, y, norm)?;
            match op {
                BinOp::Add => lhs + rhs,
                BinOp::Sub => lhs - rhs,
                BinOp::Mul => lhs * rhs,
                BinOp::Div => {
                    if rhs == 0.0 {
                        return Err(domain(node, "division by zero"));
                    }
                    lhs / rhs
                }
                BinOp::Pow => {
                    if lhs == 0.0 && rhs < 0.0 {
                        return Err(domain(node, "zero raised to a negative power"));
                    }
                    if rhs.fract() == 0.0 && rhs.abs() <= i32::MAX as f64 {
                        lhs.powi(rhs as i32)
                    } else {
                        lhs.powf(rhs)
                    }
                }
            }
        }
        Node::Call(func, args) => {
            let a = eval_node(&args[0], y, norm)?;
            match func {
                Func::Exp => a.exp(),
                Func::Abs => a.abs(),
                Func::Min => a.min(eval_node(&args[1], y, norm)?),
                Func::Max => a.max(eval_node(&args[1], y, norm)?),
            }
        }
        Node::Chi { lo, hi, arg } => {
            let s = eval_node(arg, y, norm)?;
            let above = match lo {
                Bound::NegInf => true,
                Bound::PosInf => false,
                Bound::At(b) => eval_node(b, y, norm)? < s,
            };
            let below = match hi {
                Bound::NegInf => false,
                Bound::PosInf => true,
                Bound::At(b) => s < eval_node(b, y, norm)?,
            };
            if above && below {
                1.0
            } else {
                0.0
            }
        }
    };
    if !value.is_finite() {
        return Err(domain(node, "result is not a finite real"));
    }
    Ok(value)
}
