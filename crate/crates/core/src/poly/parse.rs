//! Text syntax for polynomial expressions.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary ('*' unary)*
//! unary  := ('-' | '+') unary | power
//! power  := atom ('^' integer)?
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! The parser is generic over an [`Algebra`] so the same grammar serves plain
//! polynomials and the affine decision expressions of SOS programs.

use std::fmt;

use thiserror::Error;

use super::{Monomial, Polynomial};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseError {
    /// 1-based character column.
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "column {}: {}", self.column, self.message)
    }
}

/// Variable naming: state variables `x1..xn` followed by auxiliary
/// variables `z1..zk` (reserved for Schur-complement lifts).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarNames {
    nstate: usize,
    naux: usize,
}

impl VarNames {
    pub fn state(n: usize) -> Self {
        VarNames { nstate: n, naux: 0 }
    }

    pub fn with_aux(n: usize, k: usize) -> Self {
        VarNames { nstate: n, naux: k }
    }

    pub fn len(&self) -> usize {
        self.nstate + self.naux
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nstate(&self) -> usize {
        self.nstate
    }

    pub fn naux(&self) -> usize {
        self.naux
    }

    pub fn name(&self, i: usize) -> String {
        if i < self.nstate {
            format!("x{}", i + 1)
        } else {
            format!("z{}", i - self.nstate + 1)
        }
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        let (prefix, rest) = name.split_at(1.min(name.len()));
        let k: usize = rest.parse().ok()?;
        if k == 0 || rest.starts_with('0') {
            return None;
        }
        match prefix {
            "x" if k <= self.nstate => Some(k - 1),
            "z" if k <= self.naux => Some(self.nstate + k - 1),
            _ => None,
        }
    }
}

/// Semantic actions for the expression grammar. Errors are plain messages;
/// the parser attaches the column.
pub trait Algebra {
    type Value;
    fn number(&mut self, v: f64) -> Self::Value;
    fn ident(&mut self, name: &str) -> Result<Self::Value, String>;
    fn call(&mut self, name: &str, _args: Vec<Self::Value>) -> Result<Self::Value, String> {
        Err(format!("unknown function `{name}`"))
    }
    fn add(&mut self, a: Self::Value, b: Self::Value) -> Result<Self::Value, String>;
    fn sub(&mut self, a: Self::Value, b: Self::Value) -> Result<Self::Value, String>;
    fn mul(&mut self, a: Self::Value, b: Self::Value) -> Result<Self::Value, String>;
    fn neg(&mut self, a: Self::Value) -> Self::Value;
    fn pow(&mut self, a: Self::Value, k: u32) -> Result<Self::Value, String>;
}

pub(crate) struct PolyAlgebra<'a> {
    pub names: &'a VarNames,
}

impl Algebra for PolyAlgebra<'_> {
    type Value = Polynomial;

    fn number(&mut self, v: f64) -> Polynomial {
        Polynomial::constant(self.names.len(), v)
    }

    fn ident(&mut self, name: &str) -> Result<Polynomial, String> {
        self.names
            .lookup(name)
            .map(|i| Polynomial::term(Monomial::var(self.names.len(), i), 1.0))
            .ok_or_else(|| format!("unknown variable `{name}`"))
    }

    fn add(&mut self, a: Polynomial, b: Polynomial) -> Result<Polynomial, String> {
        Ok(&a + &b)
    }

    fn sub(&mut self, a: Polynomial, b: Polynomial) -> Result<Polynomial, String> {
        Ok(&a - &b)
    }

    fn mul(&mut self, a: Polynomial, b: Polynomial) -> Result<Polynomial, String> {
        Ok(&a * &b)
    }

    fn neg(&mut self, a: Polynomial) -> Polynomial {
        -a
    }

    fn pow(&mut self, a: Polynomial, k: u32) -> Result<Polynomial, String> {
        Ok(a.pow(k))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Int(u32),
    Op(char),
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let plain_int = s.chars().all(|c| c.is_ascii_digit());
            let v: f64 = s.parse().map_err(|_| ParseError {
                column: col,
                message: format!("malformed number `{s}`"),
            })?;
            match (plain_int, s.parse::<u32>()) {
                (true, Ok(k)) => out.push((Tok::Int(k), col)),
                _ => out.push((Tok::Num(v), col)),
            }
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), col));
        } else if "+-*^(),".contains(c) {
            out.push((Tok::Op(c), col));
            i += 1;
        } else {
            return Err(ParseError {
                column: col,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser<'a, A: Algebra> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end_col: usize,
    alg: &'a mut A,
}

impl<A: Algebra> Parser<'_, A> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |(_, c)| *c)
    }

    fn err<T>(&self, col: usize, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            column: col,
            message: message.into(),
        })
    }

    fn lift<T>(&self, col: usize, r: Result<T, String>) -> Result<T, ParseError> {
        r.map_err(|message| ParseError { column: col, message })
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Op(o)) if *o == c => {
                self.pos += 1;
                Ok(())
            }
            _ => self.err(self.col(), format!("expected `{c}`")),
        }
    }

    fn expr(&mut self) -> Result<A::Value, ParseError> {
        let mut acc = self.term()?;
        loop {
            let col = self.col();
            match self.peek() {
                Some(Tok::Op('+')) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    let r = self.alg.add(acc, rhs);
                    acc = self.lift(col, r)?;
                }
                Some(Tok::Op('-')) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    let r = self.alg.sub(acc, rhs);
                    acc = self.lift(col, r)?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<A::Value, ParseError> {
        let mut acc = self.unary()?;
        while let Some(Tok::Op('*')) = self.peek() {
            let col = self.col();
            self.pos += 1;
            let rhs = self.unary()?;
            let r = self.alg.mul(acc, rhs);
            acc = self.lift(col, r)?;
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<A::Value, ParseError> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                let v = self.unary()?;
                Ok(self.alg.neg(v))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<A::Value, ParseError> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            let col = self.col();
            self.pos += 1;
            match self.peek().cloned() {
                Some(Tok::Int(k)) => {
                    self.pos += 1;
                    let r = self.alg.pow(base, k);
                    self.lift(col, r)
                }
                _ => self.err(self.col(), "exponent must be a nonnegative integer"),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<A::Value, ParseError> {
        let col = self.col();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(self.alg.number(v))
            }
            Some(Tok::Int(k)) => {
                self.pos += 1;
                Ok(self.alg.number(f64::from(k)))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if let Some(Tok::Op('(')) = self.peek() {
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while let Some(Tok::Op(',')) = self.peek() {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(')')?;
                    let r = self.alg.call(&name, args);
                    self.lift(col, r)
                } else {
                    let r = self.alg.ident(&name);
                    self.lift(col, r)
                }
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let v = self.expr()?;
                self.expect(')')?;
                Ok(v)
            }
            Some(Tok::Op(c)) => self.err(col, format!("unexpected `{c}`")),
            None => self.err(col, "unexpected end of input"),
        }
    }
}

/// Parses `text` with the semantic actions of `alg`.
pub fn parse_expression<A: Algebra>(text: &str, alg: &mut A) -> Result<A::Value, ParseError> {
    let toks = tokenize(text)?;
    let end_col = text.chars().count() + 1;
    let mut p = Parser {
        toks,
        pos: 0,
        end_col,
        alg,
    };
    let v = p.expr()?;
    if p.pos != p.toks.len() {
        return p.err(p.col(), "trailing input");
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_expressions() {
        let q = Polynomial::parse("-(x1 + 1)^2 + 2*x1 + 1e0", 1).unwrap();
        assert_eq!(q, Polynomial::parse("-x1^2", 1).unwrap());
        let q = Polynomial::parse("1.5e-1*x2", 2).unwrap();
        assert_eq!(q.coeff(&Monomial::var(2, 1)), 0.15);
    }

    #[test]
    fn reports_columns() {
        let e = Polynomial::parse("x1 + x3", 2).unwrap_err();
        assert!(matches!(e, super::super::PolyError::Parse(ParseError { column: 6, .. })));
        let e = Polynomial::parse("x1 +", 1).unwrap_err();
        assert!(matches!(e, super::super::PolyError::Parse(ParseError { column: 5, .. })));
        let e = Polynomial::parse("x1^1.5", 1).unwrap_err();
        assert!(matches!(e, super::super::PolyError::Parse(ParseError { column: 4, .. })));
        assert!(Polynomial::parse("x1 $ 2", 1).is_err());
        assert!(Polynomial::parse("(x1", 1).is_err());
    }

    #[test]
    fn aux_variables_follow_state_variables() {
        let names = VarNames::with_aux(2, 2);
        assert_eq!(names.lookup("x2"), Some(1));
        assert_eq!(names.lookup("z1"), Some(2));
        assert_eq!(names.lookup("z3"), None);
        assert_eq!(names.lookup("x0"), None);
        assert_eq!(names.name(3), "z2");
        let q = Polynomial::parse_with("z1^2*x1", &names).unwrap();
        assert_eq!(q.nvars(), 4);
        assert_eq!(q.display_with(&names).to_string(), "x1*z1^2");
    }
}
