//! The expression language in which frame fields, transformations,
//! contorsions and spinor components are written.
//!
//! Grammar (EBNF):
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = factor { ("*" | "/") factor } ;
//! factor  = "-" factor | power ;
//! power   = atom [ "^" factor ] ;            (* right associative *)
//! atom    = number | "pi" | coordinate
//!         | function "(" expr { "," expr } ")"
//!         | "(" expr ")" ;
//! number  = digits [ "." digits ] [ ("e"|"E") ["+"|"-"] digits ] ;
//! ```
//!
//! `^` binds tighter than unary minus, so `-r^2` is `-(r^2)` and `2^3^2` is
//! `2^(3^2)`. Implicit multiplication is not supported. The language is
//! numeric-only; derivatives are taken by finite differences at chart level.

use std::fmt;
use thiserror::Error;

/// Built-in functions. `atan2` takes two arguments, the rest one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Sinh,
    Cosh,
    Atan2,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "atan2" => Func::Atan2,
            _ => return None,
        })
    }

    fn name(&self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Atan2 => "atan2",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Func::Atan2 => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Abstract syntax tree of a field expression. Coordinates are resolved to
/// their index in the chart's coordinate list at parse time.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Pi,
    Coord(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    #[error("unexpected character `{0}`")]
    UnexpectedChar(char),
    #[error("malformed number `{0}`")]
    BadNumber(String),
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unexpected token `{0}`")]
    UnexpectedToken(String),
    #[error("unknown identifier `{0}`")]
    UnknownIdent(String),
    #[error("unknown function `{0}`")]
    UnknownFunc(String),
    #[error("function `{name}` takes {expected} argument(s), got {got}")]
    WrongArity {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("expression nesting exceeds depth limit")]
    TooDeep,
    #[error("trailing input after expression")]
    TrailingInput,
}

const MAX_DEPTH: usize = 200;

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
    Comma,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(n) => write!(f, "{n:?}"),
            Tok::Ident(s) => write!(f, "{s}"),
            Tok::Plus => write!(f, "+"),
            Tok::Minus => write!(f, "-"),
            Tok::Star => write!(f, "*"),
            Tok::Slash => write!(f, "/"),
            Tok::Caret => write!(f, "^"),
            Tok::LParen => write!(f, "("),
            Tok::RParen => write!(f, ")"),
            Tok::Comma => write!(f, ","),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\r' | '\n' => i += 1,
            '+' => {
                toks.push((i, Tok::Plus));
                i += 1;
            }
            '-' => {
                toks.push((i, Tok::Minus));
                i += 1;
            }
            '*' => {
                toks.push((i, Tok::Star));
                i += 1;
            }
            '/' => {
                toks.push((i, Tok::Slash));
                i += 1;
            }
            '^' => {
                toks.push((i, Tok::Caret));
                i += 1;
            }
            '(' => {
                toks.push((i, Tok::LParen));
                i += 1;
            }
            ')' => {
                toks.push((i, Tok::RParen));
                i += 1;
            }
            ',' => {
                toks.push((i, Tok::Comma));
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
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
                let text = &src[start..i];
                let num: f64 = text.parse().map_err(|_| ParseError {
                    offset: start,
                    kind: ParseErrorKind::BadNumber(text.to_string()),
                })?;
                toks.push((start, Tok::Num(num)));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push((start, Tok::Ident(src[start..i].to_string())));
            }
            other => {
                return Err(ParseError {
                    offset: i,
                    kind: ParseErrorKind::UnexpectedChar(other),
                })
            }
        }
    }
    Ok(toks)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    coords: &'a [String],
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<(usize, Tok)> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            offset: self.offset(),
            kind,
        }
    }

    fn guard(&self, depth: usize) -> Result<(), ParseError> {
        if depth > MAX_DEPTH {
            Err(self.err(ParseErrorKind::TooDeep))
        } else {
            Ok(())
        }
    }

    fn parse_expr(&mut self, depth: usize) -> Result<Expr, ParseError> {
        self.guard(depth)?;
        let mut lhs = self.parse_term(depth + 1)?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => break,
            };
            self.next();
            let rhs = self.parse_term(depth + 1)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_term(&mut self, depth: usize) -> Result<Expr, ParseError> {
        self.guard(depth)?;
        let mut lhs = self.parse_factor(depth + 1)?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => break,
            };
            self.next();
            let rhs = self.parse_factor(depth + 1)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_factor(&mut self, depth: usize) -> Result<Expr, ParseError> {
        self.guard(depth)?;
        if let Some(Tok::Minus) = self.peek() {
            self.next();
            let inner = self.parse_factor(depth + 1)?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.parse_power(depth + 1)
    }

    fn parse_power(&mut self, depth: usize) -> Result<Expr, ParseError> {
        self.guard(depth)?;
        let base = self.parse_atom(depth + 1)?;
        if let Some(Tok::Caret) = self.peek() {
            self.next();
            let exp = self.parse_factor(depth + 1)?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn parse_atom(&mut self, depth: usize) -> Result<Expr, ParseError> {
        self.guard(depth)?;
        let (offset, tok) = self
            .next()
            .ok_or(ParseError {
                offset: self.end,
                kind: ParseErrorKind::UnexpectedEnd,
            })?;
        match tok {
            Tok::Num(n) => Ok(Expr::Num(n)),
            Tok::LParen => {
                let inner = self.parse_expr(depth + 1)?;
                match self.next() {
                    Some((_, Tok::RParen)) => Ok(inner),
                    Some((o, t)) => Err(ParseError {
                        offset: o,
                        kind: ParseErrorKind::UnexpectedToken(t.to_string()),
                    }),
                    None => Err(ParseError {
                        offset: self.end,
                        kind: ParseErrorKind::UnexpectedEnd,
                    }),
                }
            }
            Tok::Ident(name) => {
                if let Some(Tok::LParen) = self.peek() {
                    let func = Func::from_name(&name).ok_or(ParseError {
                        offset,
                        kind: ParseErrorKind::UnknownFunc(name.clone()),
                    })?;
                    self.next();
                    let mut args = vec![self.parse_expr(depth + 1)?];
                    loop {
                        match self.next() {
                            Some((_, Tok::Comma)) => args.push(self.parse_expr(depth + 1)?),
                            Some((_, Tok::RParen)) => break,
                            Some((o, t)) => {
                                return Err(ParseError {
                                    offset: o,
                                    kind: ParseErrorKind::UnexpectedToken(t.to_string()),
                                })
                            }
                            None => {
                                return Err(ParseError {
                                    offset: self.end,
                                    kind: ParseErrorKind::UnexpectedEnd,
                                })
                            }
                        }
                    }
                    if args.len() != func.arity() {
                        return Err(ParseError {
                            offset,
                            kind: ParseErrorKind::WrongArity {
                                name: name.clone(),
                                expected: func.arity(),
                                got: args.len(),
                            },
                        });
                    }
                    Ok(Expr::Call(func, args))
                } else if name == "pi" {
                    Ok(Expr::Pi)
                } else if let Some(idx) = self.coords.iter().position(|c| *c == name) {
                    Ok(Expr::Coord(idx))
                } else {
                    Err(ParseError {
                        offset,
                        kind: ParseErrorKind::UnknownIdent(name),
                    })
                }
            }
            other => Err(ParseError {
                offset,
                kind: ParseErrorKind::UnexpectedToken(other.to_string()),
            }),
        }
    }
}

/// Parses `src` against the chart's coordinate names. Every input either
/// yields an AST or a positioned error; identical source yields an identical
/// AST.
pub fn parse(src: &str, coords: &[String]) -> Result<Expr, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        coords,
        end: src.len(),
    };
    let expr = p.parse_expr(0)?;
    if p.pos != p.toks.len() {
        return Err(p.err(ParseErrorKind::TrailingInput));
    }
    Ok(expr)
}

/// IEEE double evaluation at a coordinate tuple; NaN and infinities propagate
/// so callers can flag them at chart-sampling level.
pub fn eval(e: &Expr, point: &[f64]) -> f64 {
    match e {
        Expr::Num(n) => *n,
        Expr::Pi => std::f64::consts::PI,
        Expr::Coord(i) => point[*i],
        Expr::Neg(inner) => -eval(inner, point),
        Expr::Bin(op, a, b) => {
            let x = eval(a, point);
            let y = eval(b, point);
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
                BinOp::Pow => x.powf(y),
            }
        }
        Expr::Call(func, args) => {
            let x = eval(&args[0], point);
            match func {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Tan => x.tan(),
                Func::Exp => x.exp(),
                Func::Log => x.ln(),
                Func::Sqrt => x.sqrt(),
                Func::Sinh => x.sinh(),
                Func::Cosh => x.cosh(),
                Func::Atan2 => x.atan2(eval(&args[1], point)),
            }
        }
    }
}

/// Prints an expression so that parsing it back evaluates identically.
pub fn print(e: &Expr, coords: &[String]) -> String {
    fn go(e: &Expr, coords: &[String], out: &mut String) {
        match e {
            Expr::Num(n) => {
                if *n < 0.0 || (n == &0.0 && n.is_sign_negative()) {
                    out.push_str(&format!("({n:?})"));
                } else {
                    out.push_str(&format!("{n:?}"));
                }
            }
            Expr::Pi => out.push_str("pi"),
            Expr::Coord(i) => out.push_str(&coords[*i]),
            Expr::Neg(inner) => {
                out.push_str("(-");
                go(inner, coords, out);
                out.push(')');
            }
            Expr::Bin(op, a, b) => {
                out.push('(');
                go(a, coords, out);
                out.push_str(match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                });
                go(b, coords, out);
                out.push(')');
            }
            Expr::Call(func, args) => {
                out.push_str(func.name());
                out.push('(');
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    go(a, coords, out);
                }
                out.push(')');
            }
        }
    }
    let mut s = String::new();
    go(e, coords, &mut s);
    s
}

/// A shaped collection of expressions over a common coordinate list: scalar
/// (shape `[]`), m-vector, m x m, or m x m x m.
#[derive(Debug, Clone)]
pub struct FieldDef {
    pub coords: Vec<String>,
    pub shape: Vec<usize>,
    pub exprs: Vec<Expr>,
}

impl FieldDef {
    pub fn new(coords: Vec<String>, shape: Vec<usize>, exprs: Vec<Expr>) -> Self {
        let expected: usize = shape.iter().product();
        assert_eq!(exprs.len(), expected, "shape/expression count mismatch");
        FieldDef {
            coords,
            shape,
            exprs,
        }
    }

    /// Parses a flat list of sources into a FieldDef.
    pub fn parse_all(
        coords: Vec<String>,
        shape: Vec<usize>,
        sources: &[&str],
    ) -> Result<Self, ParseError> {
        let exprs = sources
            .iter()
            .map(|s| parse(s, &coords))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FieldDef::new(coords, shape, exprs))
    }
}
