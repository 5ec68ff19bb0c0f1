//! Coefficient DSL: drift and diffusion entries as parsed arithmetic
//! expressions over `(t, segment, law)`.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr    := term (('+'|'-') term)*
//! term    := factor (('*'|'/') factor)*
//! factor  := number | 't' | lagref | measref
//!          | func '(' expr (',' expr)? ')' | '(' expr ')' | '-' factor
//! lagref  := 'x[' int '](' signed-number ')'
//! measref := 'E[x[' int '](' signed-number ')]' | 'E[supnorm]'
//! func    := 'min' | 'max' | 'exp' | 'tanh' | 'abs'
//! ```
//!
//! Lags must land exactly on grid points in `[-r0, 0]`. Measure terminals
//! evaluate against precomputed first moments of the law, which is exact
//! for means over empirical atoms.

use crate::measures::{EmpiricalMeasure, WeightedMeasure};
use crate::segments::{PathSegment, SegmentView, TimeGrid};
use thiserror::Error;

const MAX_DEPTH: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("lag {theta} is not on the grid at offset {offset}")]
    LagNotOnGrid { offset: usize, theta: f64 },
    #[error("coordinate index {index} out of range 1..={dim} at offset {offset}")]
    IndexOutOfRange { offset: usize, index: usize, dim: usize },
    #[error("expression exceeds maximum depth {MAX_DEPTH}")]
    TooDeep,
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite intermediate value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func1 {
    Exp,
    Tanh,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func2 {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Time,
    /// `x[coord](theta)` with `theta = -lag_cols * dt`; coord is 0-based here.
    Lag { coord: usize, lag_cols: usize },
    /// `E[x[coord](theta)]`.
    MeanLag { coord: usize, lag_cols: usize },
    /// `E[supnorm]`.
    MeanSupNorm,
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Func1(Func1, Box<Node>),
    Func2(Func2, Box<Node>, Box<Node>),
}

/// A parsed coefficient expression, validated against `(d, grid)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffExpr {
    root: Node,
    dim: usize,
    lag_steps: usize,
    dt: f64,
}

impl CoeffExpr {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// True when every segment/measure terminal is `x[coord](0)` for the
    /// given 0-based coordinate. This is the syntactic form of the
    /// diffusion structure condition.
    pub fn depends_only_on_current_value(&self, coord: usize) -> bool {
        fn walk(n: &Node, coord: usize) -> bool {
            match n {
                Node::Const(_) | Node::Time => true,
                Node::Lag { coord: c, lag_cols } => *c == coord && *lag_cols == 0,
                Node::MeanLag { .. } | Node::MeanSupNorm => false,
                Node::Neg(a) | Node::Func1(_, a) => walk(a, coord),
                Node::Bin(_, a, b) | Node::Func2(_, a, b) => {
                    walk(a, coord) && walk(b, coord)
                }
            }
        }
        walk(&self.root, coord)
    }

    /// Canonical text form; parsing it back yields an identical AST.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        self.print(&self.root, 0, &mut out);
        out
    }

    fn print(&self, n: &Node, parent_prec: u8, out: &mut String) {
        let prec = match n {
            Node::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Node::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Node::Neg(_) => 3,
            _ => 4,
        };
        let parens = prec < parent_prec;
        if parens {
            out.push('(');
        }
        match n {
            Node::Const(v) => out.push_str(&format!("{v}")),
            Node::Time => out.push('t'),
            Node::Lag { coord, lag_cols } => {
                out.push_str(&format!("x[{}]({})", coord + 1, -(*lag_cols as f64) * self.dt));
            }
            Node::MeanLag { coord, lag_cols } => {
                out.push_str(&format!("E[x[{}]({})]", coord + 1, -(*lag_cols as f64) * self.dt));
            }
            Node::MeanSupNorm => out.push_str("E[supnorm]"),
            Node::Neg(a) => {
                out.push('-');
                self.print(a, 4, out);
            }
            Node::Bin(op, a, b) => {
                let (sym, lp, rp) = match op {
                    BinOp::Add => ('+', 1, 1),
                    BinOp::Sub => ('-', 1, 2),
                    BinOp::Mul => ('*', 2, 2),
                    BinOp::Div => ('/', 2, 3),
                };
                self.print(a, lp, out);
                out.push(' ');
                out.push(sym);
                out.push(' ');
                self.print(b, rp, out);
            }
            Node::Func1(f, a) => {
                out.push_str(match f {
                    Func1::Exp => "exp",
                    Func1::Tanh => "tanh",
                    Func1::Abs => "abs",
                });
                out.push('(');
                self.print(a, 0, out);
                out.push(')');
            }
            Node::Func2(f, a, b) => {
                out.push_str(match f {
                    Func2::Min => "min",
                    Func2::Max => "max",
                });
                out.push('(');
                self.print(a, 0, out);
                out.push_str(", ");
                self.print(b, 0, out);
                out.push(')');
            }
        }
        if parens {
            out.push(')');
        }
    }
}

/// Parses a coefficient expression against dimension `d` and the grid's
/// lag structure.
pub fn parse_coeff(src: &str, d: usize, grid: &TimeGrid) -> Result<CoeffExpr, ParseError> {
    let mut p = Parser { src: src.as_bytes(), pos: 0, dim: d, grid };
    p.skip_ws();
    if p.pos >= p.src.len() {
        return Err(p.syntax("empty expression"));
    }
    let root = p.expr(0)?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(CoeffExpr { root, dim: d, lag_steps: grid.lag_steps, dt: grid.dt })
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: usize,
    grid: &'a TimeGrid,
}

impl<'a> Parser<'a> {
    fn syntax(&self, message: &str) -> ParseError {
        // Offsets are 1-based, pointing at the offending character.
        ParseError::Syntax { offset: self.pos + 1, message: message.into() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, ch: u8) -> Result<(), ParseError> {
        if self.peek() == Some(ch) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{}`", ch as char)))
        }
    }

    fn expr(&mut self, depth: usize) -> Result<Node, ParseError> {
        if depth >= MAX_DEPTH {
            return Err(ParseError::TooDeep);
        }
        let mut lhs = self.term(depth + 1)?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term(depth + 1)?;
                    lhs = Node::Bin(BinOp::Add, Box::new(lhs), Box::new(rhs));
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term(depth + 1)?;
                    lhs = Node::Bin(BinOp::Sub, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self, depth: usize) -> Result<Node, ParseError> {
        if depth >= MAX_DEPTH {
            return Err(ParseError::TooDeep);
        }
        let mut lhs = self.factor(depth + 1)?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.factor(depth + 1)?;
                    lhs = Node::Bin(BinOp::Mul, Box::new(lhs), Box::new(rhs));
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.factor(depth + 1)?;
                    lhs = Node::Bin(BinOp::Div, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self, depth: usize) -> Result<Node, ParseError> {
        if depth >= MAX_DEPTH {
            return Err(ParseError::TooDeep);
        }
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.factor(depth + 1)?)))
            }
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr(depth + 1)?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => Ok(Node::Const(self.number()?)),
            Some(c) if c.is_ascii_alphabetic() => self.identifier(depth),
            Some(c) => Err(self.syntax(&format!("unexpected character `{}`", c as char))),
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.')
        {
            self.pos += 1;
        }
        // Optional exponent.
        if self.pos < self.src.len() && (self.src[self.pos] | 0x20) == b'e' {
            let mut probe = self.pos + 1;
            if probe < self.src.len() && (self.src[probe] == b'+' || self.src[probe] == b'-') {
                probe += 1;
            }
            if probe < self.src.len() && self.src[probe].is_ascii_digit() {
                self.pos = probe;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>().map_err(|_| ParseError::Syntax {
            offset: start + 1,
            message: format!("invalid number `{text}`"),
        })
    }

    fn signed_number(&mut self) -> Result<f64, ParseError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            Ok(-self.number()?)
        } else {
            self.number()
        }
    }

    fn integer(&mut self) -> Result<usize, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.syntax("expected an integer"));
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| ParseError::Syntax { offset: start + 1, message: "integer overflow".into() })
    }

    fn identifier(&mut self, depth: usize) -> Result<Node, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
        match name.as_str() {
            "t" => Ok(Node::Time),
            "x" => {
                let (coord, lag_cols) = self.lag_ref(start)?;
                Ok(Node::Lag { coord, lag_cols })
            }
            "E" => {
                self.expect(b'[')?;
                self.skip_ws();
                if self.src[self.pos..].starts_with(b"supnorm") {
                    self.pos += "supnorm".len();
                    self.expect(b']')?;
                    Ok(Node::MeanSupNorm)
                } else if self.peek() == Some(b'x') {
                    self.pos += 1;
                    let (coord, lag_cols) = self.lag_ref(start)?;
                    self.expect(b']')?;
                    Ok(Node::MeanLag { coord, lag_cols })
                } else {
                    Err(self.syntax("expected `x[...]` or `supnorm` inside E[...]"))
                }
            }
            "min" | "max" => {
                let f = if name == "min" { Func2::Min } else { Func2::Max };
                self.expect(b'(')?;
                let a = self.expr(depth + 1)?;
                self.expect(b',')?;
                let b = self.expr(depth + 1)?;
                self.expect(b')')?;
                Ok(Node::Func2(f, Box::new(a), Box::new(b)))
            }
            "exp" | "tanh" | "abs" => {
                let f = match name.as_str() {
                    "exp" => Func1::Exp,
                    "tanh" => Func1::Tanh,
                    _ => Func1::Abs,
                };
                self.expect(b'(')?;
                let a = self.expr(depth + 1)?;
                self.expect(b')')?;
                Ok(Node::Func1(f, Box::new(a)))
            }
            _ => Err(ParseError::UnknownIdentifier { offset: start + 1, name }),
        }
    }

    /// Parses `[int](signed-number)` after an `x`, returning the 0-based
    /// coordinate and the lag column offset.
    fn lag_ref(&mut self, ref_start: usize) -> Result<(usize, usize), ParseError> {
        self.expect(b'[')?;
        let index = self.integer()?;
        self.expect(b']')?;
        self.expect(b'(')?;
        let theta = self.signed_number()?;
        self.expect(b')')?;
        if index < 1 || index > self.dim {
            return Err(ParseError::IndexOutOfRange {
                offset: ref_start + 1,
                index,
                dim: self.dim,
            });
        }
        let lag_cols = self
            .grid
            .lag_cols_of(theta)
            .map_err(|_| ParseError::LagNotOnGrid { offset: ref_start + 1, theta })?;
        Ok((index - 1, lag_cols))
    }
}

/// First moments of a law, sufficient to evaluate every measure terminal
/// of the DSL exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct LawMoments {
    mean: PathSegment,
    mean_supnorm: f64,
}

impl LawMoments {
    pub fn from_measure(mu: &EmpiricalMeasure) -> LawMoments {
        let (dim, cols) = mu.shape();
        let mut acc = MomentAccumulator::new(dim, cols);
        for a in mu.atoms() {
            acc.add(&a.view(), 1.0);
        }
        acc.finish()
    }

    pub fn from_weighted(m: &WeightedMeasure) -> LawMoments {
        let (dim, cols) = (m.atoms()[0].dim(), m.atoms()[0].cols());
        let mut acc = MomentAccumulator::new(dim, cols);
        for (a, w) in m.atoms().iter().zip(m.weights()) {
            acc.add(&a.view(), *w);
        }
        acc.finish()
    }

    /// The Dirac measure at the zero path.
    pub fn dirac_zero(dim: usize, cols: usize) -> LawMoments {
        LawMoments { mean: PathSegment::zeros(dim, cols), mean_supnorm: 0.0 }
    }

    pub fn mean(&self) -> &PathSegment {
        &self.mean
    }

    pub fn mean_supnorm(&self) -> f64 {
        self.mean_supnorm
    }
}

/// Streaming builder for [`LawMoments`], used by the particle loop to
/// avoid materialising atom segments.
pub struct MomentAccumulator {
    dim: usize,
    sum: Vec<f64>,
    sum_supnorm: f64,
    total_weight: f64,
}

impl MomentAccumulator {
    pub fn new(dim: usize, cols: usize) -> MomentAccumulator {
        MomentAccumulator { dim, sum: vec![0.0; dim * cols], sum_supnorm: 0.0, total_weight: 0.0 }
    }

    pub fn add(&mut self, seg: &SegmentView, weight: f64) {
        debug_assert_eq!(seg.data.len(), self.sum.len());
        for (s, v) in self.sum.iter_mut().zip(seg.data) {
            *s += weight * v;
        }
        self.sum_supnorm += weight * seg.sup_norm();
        self.total_weight += weight;
    }

    pub fn finish(self) -> LawMoments {
        let inv = 1.0 / self.total_weight;
        let mean = PathSegment::new(self.dim, self.sum.iter().map(|s| s * inv).collect())
            .expect("moment sums are finite");
        LawMoments { mean, mean_supnorm: self.sum_supnorm * inv }
    }
}

/// Evaluates a coefficient expression at `(t, seg, law)`.
pub fn eval_coeff(
    expr: &CoeffExpr,
    t: f64,
    seg: &SegmentView,
    law: &LawMoments,
) -> Result<f64, EvalError> {
    debug_assert_eq!(seg.dim, expr.dim);
    debug_assert_eq!(seg.cols, expr.lag_steps + 1);
    eval_node(&expr.root, t, seg, law)
}

/// Convenience wrapper taking an owned segment and an empirical law.
pub fn eval_coeff_measure(
    expr: &CoeffExpr,
    t: f64,
    seg: &PathSegment,
    law: &EmpiricalMeasure,
) -> Result<f64, EvalError> {
    eval_coeff(expr, t, &seg.view(), &LawMoments::from_measure(law))
}

fn eval_node(n: &Node, t: f64, seg: &SegmentView, law: &LawMoments) -> Result<f64, EvalError> {
    let v = match n {
        Node::Const(c) => *c,
        Node::Time => t,
        Node::Lag { coord, lag_cols } => seg.lagged(*coord, *lag_cols),
        Node::MeanLag { coord, lag_cols } => law.mean().view().lagged(*coord, *lag_cols),
        Node::MeanSupNorm => law.mean_supnorm(),
        Node::Neg(a) => -eval_node(a, t, seg, law)?,
        Node::Bin(op, a, b) => {
            let x = eval_node(a, t, seg, law)?;
            let y = eval_node(b, t, seg, law)?;
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => {
                    if y == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    x / y
                }
            }
        }
        Node::Func1(f, a) => {
            let x = eval_node(a, t, seg, law)?;
            match f {
                Func1::Exp => x.exp(),
                Func1::Tanh => x.tanh(),
                Func1::Abs => x.abs(),
            }
        }
        Node::Func2(f, a, b) => {
            let x = eval_node(a, t, seg, law)?;
            let y = eval_node(b, t, seg, law)?;
            match f {
                Func2::Min => x.min(y),
                Func2::Max => x.max(y),
            }
        }
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite)
    }
}

/// Drift vector and diffusion matrix for one system of the pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffModel {
    pub dim: usize,
    pub noise_dim: usize,
    /// `drift[i]` is the i-th drift component.
    pub drift: Vec<CoeffExpr>,
    /// `diffusion[i][j]` multiplies the j-th Brownian increment in the
    /// i-th coordinate.
    pub diffusion: Vec<Vec<CoeffExpr>>,
}

impl CoeffModel {
    pub fn new(
        dim: usize,
        noise_dim: usize,
        drift: Vec<CoeffExpr>,
        diffusion: Vec<Vec<CoeffExpr>>,
    ) -> Result<CoeffModel, ParseError> {
        if drift.len() != dim
            || diffusion.len() != dim
            || diffusion.iter().any(|row| row.len() != noise_dim)
        {
            return Err(ParseError::Syntax {
                offset: 0,
                message: format!(
                    "model needs {dim} drift entries and a {dim}x{noise_dim} diffusion matrix"
                ),
            });
        }
        Ok(CoeffModel { dim, noise_dim, drift, diffusion })
    }

    /// FNV-1a hash of the canonical expression texts; stable across runs
    /// and platforms.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |s: &str| {
            for b in s.bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x1000_0000_01b3);
        };
        for e in &self.drift {
            feed(&e.to_canonical_string());
        }
        for row in &self.diffusion {
            for e in row {
                feed(&e.to_canonical_string());
            }
        }
        format!("{h:016x}")
    }
}
