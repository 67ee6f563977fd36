//! Sparse multivariate polynomials with `f64` coefficients.
//!
//! Terms are kept in a `BTreeMap` keyed by [`Monomial`], whose ordering is
//! graded lexicographic: total degree first, then lexicographic with `x1`
//! dominating. Iteration therefore always visits terms in a canonical order,
//! which keeps everything built on top (Gram bases, SDP files) reproducible.
//!
//! Exact zeros are never stored. No tolerance-based pruning happens here;
//! callers that want to drop tiny coefficients do so explicitly.

mod parse;
mod vecmat;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use smallvec::SmallVec;
use thiserror::Error;

pub use parse::{parse_expression, Algebra, ParseError, VarNames};
pub use vecmat::{PolyMatrix, PolyVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolyError {
    #[error("variable count mismatch: {left} vs {right}")]
    NvarsMismatch { left: usize, right: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Exponent vector of a monomial. Its length is the number of variables of
/// the polynomial ring it lives in.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Monomial(SmallVec<[u16; 8]>);

impl Monomial {
    pub fn one(nvars: usize) -> Self {
        Monomial(SmallVec::from_elem(0, nvars))
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut m = Self::one(nvars);
        m.0[i] = 1;
        m
    }

    pub fn from_exponents(exps: &[u16]) -> Self {
        Monomial(SmallVec::from_slice(exps))
    }

    pub fn exponents(&self) -> &[u16] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&e| u32::from(e)).sum()
    }

    /// Degree restricted to the given variable indices.
    pub fn degree_in(&self, vars: &[usize]) -> u32 {
        vars.iter().map(|&v| u32::from(self.0[v])).sum()
    }

    pub fn is_one(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.nvars(), other.nvars());
        Monomial(self.0.iter().zip(other.0.iter()).map(|(a, b)| a + b).collect())
    }

    /// Value of the monomial at `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = 1.0;
        for (&e, &xi) in self.0.iter().zip(x) {
            if e > 0 {
                v *= xi.powi(i32::from(e));
            }
        }
        v
    }

    /// Same exponents embedded in a ring with `nvars >= self.nvars()`
    /// variables; the new variables get exponent zero.
    pub fn extend(&self, nvars: usize) -> Monomial {
        let mut m = self.0.clone();
        m.resize(nvars, 0);
        Monomial(m)
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::term(Monomial::one(nvars), c)
    }

    /// The coordinate polynomial `x_{i+1}`.
    pub fn var(nvars: usize, i: usize) -> Self {
        assert!(i < nvars, "variable index {i} out of range for {nvars} variables");
        Self::term(Monomial::var(nvars, i), 1.0)
    }

    pub fn term(m: Monomial, c: f64) -> Self {
        let nvars = m.nvars();
        let mut terms = BTreeMap::new();
        if c != 0.0 {
            terms.insert(m, c);
        }
        Polynomial { nvars, terms }
    }

    /// Builds a polynomial from `(monomial, coefficient)` pairs, summing
    /// duplicates.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = (Monomial, f64)>,
    {
        let mut p = Polynomial::zero(nvars);
        for (m, c) in terms {
            if m.nvars() != nvars {
                return Err(PolyError::NvarsMismatch {
                    left: nvars,
                    right: m.nvars(),
                });
            }
            p.add_term(m, c);
        }
        Ok(p)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Terms in ascending graded-lex order.
    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, f64)> + '_ {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn constant_term(&self) -> f64 {
        self.coeff(&Monomial::one(self.nvars))
    }

    /// Total degree; zero for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.keys().next_back().map_or(0, Monomial::degree)
    }

    /// Lowest total degree of any term; zero for the zero polynomial.
    pub fn min_degree(&self) -> u32 {
        self.terms.keys().next().map_or(0, Monomial::degree)
    }

    pub fn degree_in(&self, vars: &[usize]) -> u32 {
        self.terms.keys().map(|m| m.degree_in(vars)).max().unwrap_or(0)
    }

    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(Monomial::is_one)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, &c| a.max(c.abs()))
    }

    pub fn add_term(&mut self, m: Monomial, c: f64) {
        if c == 0.0 {
            return;
        }
        debug_assert_eq!(m.nvars(), self.nvars);
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let v = *e.get() + c;
                if v == 0.0 {
                    e.remove();
                } else {
                    *e.get_mut() = v;
                }
            }
        }
    }

    fn check_nvars(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            return Err(PolyError::NvarsMismatch {
                left: self.nvars,
                right: other.nvars,
            });
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_nvars(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        Ok(out)
    }

    pub fn checked_sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_nvars(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), -c);
        }
        Ok(out)
    }

    pub fn checked_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_nvars(other)?;
        let mut out = Polynomial::zero(self.nvars);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        if s == 0.0 {
            return Polynomial::zero(self.nvars);
        }
        Polynomial {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .filter_map(|(m, &c)| {
                    let v = c * s;
                    (v != 0.0).then(|| (m.clone(), v))
                })
                .collect(),
        }
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut out = Polynomial::constant(self.nvars, 1.0);
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    /// Partial derivative with respect to variable `i` (zero-based).
    pub fn derivative(&self, i: usize) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (m, &c) in &self.terms {
            let e = m.0[i];
            if e == 0 {
                continue;
            }
            let mut d = m.clone();
            d.0[i] -= 1;
            out.add_term(d, c * f64::from(e));
        }
        out
    }

    pub fn gradient(&self) -> PolyVector {
        PolyVector::from_vec(self.nvars, (0..self.nvars).map(|i| self.derivative(i)).collect())
            .expect("gradient entries share nvars")
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<f64, PolyError> {
        if point.len() != self.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                found: point.len(),
            });
        }
        Ok(self.eval(point))
    }

    /// Evaluation without the length check.
    pub fn eval(&self, point: &[f64]) -> f64 {
        self.terms.iter().map(|(m, &c)| c * m.eval(point)).sum()
    }

    /// Re-embeds the polynomial in a ring with more variables.
    pub fn extend_vars(&self, nvars: usize) -> Polynomial {
        assert!(nvars >= self.nvars);
        Polynomial {
            nvars,
            terms: self.terms.iter().map(|(m, &c)| (m.extend(nvars), c)).collect(),
        }
    }

    /// Substitutes `subs[i]` for variable `i`. All substitutes must share one
    /// variable count, which becomes the variable count of the result.
    pub fn compose(&self, subs: &[Polynomial]) -> Result<Polynomial, PolyError> {
        if subs.len() != self.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                found: subs.len(),
            });
        }
        let target = subs.first().map_or(0, Polynomial::nvars);
        if let Some(bad) = subs.iter().find(|s| s.nvars != target) {
            return Err(PolyError::NvarsMismatch {
                left: target,
                right: bad.nvars,
            });
        }
        let mut out = Polynomial::zero(target);
        for (m, &c) in &self.terms {
            let mut t = Polynomial::constant(target, c);
            for (i, &e) in m.0.iter().enumerate() {
                if e > 0 {
                    t = &t * &subs[i].pow(u32::from(e));
                }
            }
            out = &out + &t;
        }
        Ok(out)
    }

    pub fn map_coeffs(&self, f: impl Fn(&Monomial, f64) -> f64) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (m, &c) in &self.terms {
            out.add_term(m.clone(), f(m, c));
        }
        out
    }

    /// Largest coefficient difference `max |self_a - other_a|`.
    pub fn max_coeff_diff(&self, other: &Polynomial) -> f64 {
        (self - other).max_abs_coeff()
    }

    pub fn display_with<'a>(&'a self, names: &'a VarNames) -> DisplayPoly<'a> {
        DisplayPoly { poly: self, names }
    }

    /// Parses the textual syntax (`3.5*x1^2*x2 - x3 + 1`) with variables
    /// `x1..xn`.
    pub fn parse(text: &str, nvars: usize) -> Result<Polynomial, PolyError> {
        Self::parse_with(text, &VarNames::state(nvars))
    }

    pub fn parse_with(text: &str, names: &VarNames) -> Result<Polynomial, PolyError> {
        Ok(parse_expression(text, &mut parse::PolyAlgebra { names })?)
    }
}

pub struct DisplayPoly<'a> {
    poly: &'a Polynomial,
    names: &'a VarNames,
}

impl fmt::Display for DisplayPoly<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.poly.is_zero() {
            return f.write_str("0");
        }
        for (k, (m, c)) in self.poly.terms().rev().enumerate() {
            let (sign, mag) = if c < 0.0 { ("-", -c) } else { ("+", c) };
            if k == 0 {
                if sign == "-" {
                    f.write_str("-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            let mut factors = Vec::new();
            for (i, &e) in m.exponents().iter().enumerate() {
                match e {
                    0 => {}
                    1 => factors.push(self.names.name(i)),
                    _ => factors.push(format!("{}^{}", self.names.name(i), e)),
                }
            }
            if factors.is_empty() {
                write!(f, "{}", fmt_coeff(mag))?;
            } else if mag == 1.0 {
                write!(f, "{}", factors.join("*"))?;
            } else {
                write!(f, "{}*{}", fmt_coeff(mag), factors.join("*"))?;
            }
        }
        Ok(())
    }
}

/// Shortest decimal that round-trips through `f64::from_str`.
pub(crate) fn fmt_coeff(c: f64) -> String {
    if c.fract() == 0.0 && c.abs() < 1e15 {
        format!("{c}")
    } else {
        format!("{c:?}")
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = VarNames::state(self.nvars);
        write!(f, "{}", self.display_with(&names))
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident, $checked:ident) => {
        impl $tr<&Polynomial> for &Polynomial {
            type Output = Polynomial;
            /// Panics when the variable counts differ; use the `checked_`
            /// variant to get an error instead.
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                self.$checked(rhs).unwrap_or_else(|e| panic!("{e}"))
            }
        }
        impl $tr<Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: Polynomial) -> Polynomial {
                (&self).$method(&rhs)
            }
        }
        impl $tr<&Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                (&self).$method(rhs)
            }
        }
    };
}

binop!(Add, add, checked_add);
binop!(Sub, sub, checked_sub);
binop!(Mul, mul, checked_mul);

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str, n: usize) -> Polynomial {
        Polynomial::parse(s, n).unwrap()
    }

    #[test]
    fn difference_of_squares() {
        let a = p("x1 + 1", 1);
        let b = p("x1 - 1", 1);
        assert_eq!(&a * &b, p("x1^2 - 1", 1));
    }

    #[test]
    fn additive_identity() {
        let a = p("3*x1^2*x2 - x2 + 7", 2);
        assert_eq!(&a + &Polynomial::zero(2), a);
    }

    #[test]
    fn binomial_square() {
        let s = p("x1 + x2", 2);
        assert_eq!(s.pow(2), p("x1^2 + 2*x1*x2 + x2^2", 2));
    }

    #[test]
    fn mismatched_nvars_is_an_error() {
        let a = Polynomial::var(1, 0);
        let b = Polynomial::var(2, 1);
        assert!(matches!(
            a.checked_mul(&b),
            Err(PolyError::NvarsMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn gradients() {
        let g = p("0.5*x1^2", 3).gradient();
        assert_eq!(g[0], p("x1", 3));
        assert!(g[1].is_zero() && g[2].is_zero());
        assert!(p("4", 2).gradient().iter().all(Polynomial::is_zero));
        let g = p("x1*x2", 2).gradient();
        assert_eq!(g[0], p("x2", 2));
        assert_eq!(g[1], p("x1", 2));
    }

    #[test]
    fn evaluation() {
        let q = p("x1^2 - 1", 1);
        assert_eq!(q.evaluate(&[1.0]).unwrap(), 0.0);
        assert_eq!(q.evaluate(&[2.0]).unwrap(), 3.0);
        assert_eq!(p("x1*x2", 2).evaluate(&[3.0, 4.0]).unwrap(), 12.0);
        assert!(matches!(
            q.evaluate(&[1.0, 2.0]),
            Err(PolyError::DimensionMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn graded_lex_order() {
        let mut ms = [
            Monomial::from_exponents(&[0, 2]),
            Monomial::from_exponents(&[1, 1]),
            Monomial::from_exponents(&[0, 0]),
            Monomial::from_exponents(&[2, 0]),
            Monomial::from_exponents(&[0, 1]),
            Monomial::from_exponents(&[1, 0]),
        ];
        ms.sort();
        let exps: Vec<_> = ms.iter().map(|m| m.exponents().to_vec()).collect();
        assert_eq!(
            exps,
            vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
    }

    #[test]
    fn display_is_descending_and_reparses() {
        let q = p("1 - x3 + 3.5*x1^2*x2", 3);
        assert_eq!(q.to_string(), "3.5*x1^2*x2 - x3 + 1");
        assert_eq!(p(&q.to_string(), 3), q);
        assert_eq!(Polynomial::zero(2).to_string(), "0");
        assert_eq!(p("-x1", 1).to_string(), "-x1");
    }

    #[test]
    fn tiny_and_huge_coefficients_round_trip() {
        let q = Polynomial::from_terms(
            2,
            [
                (Monomial::from_exponents(&[1, 0]), 1.0e-300),
                (Monomial::from_exponents(&[0, 3]), -2.5e250),
                (Monomial::from_exponents(&[0, 0]), 0.1 + 0.2),
            ],
        )
        .unwrap();
        assert_eq!(p(&q.to_string(), 2), q);
    }

    #[test]
    fn compose_substitutes_variables() {
        // (x1 + x2)^2 with x1 -> t, x2 -> t^2 in one variable
        let q = p("x1^2 + 2*x1*x2 + x2^2", 2);
        let t = Polynomial::var(1, 0);
        let r = q.compose(&[t.clone(), t.pow(2)]).unwrap();
        assert_eq!(r, p("x1^2 + 2*x1^3 + x1^4", 1));
    }

    #[test]
    fn exact_cancellation_drops_terms() {
        let q = p("x1^2 + x1", 1);
        let r = &q - &p("x1", 1);
        assert_eq!(r.len(), 1);
        assert_eq!(r.degree(), 2);
    }
}
