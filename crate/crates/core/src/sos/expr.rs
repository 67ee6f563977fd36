use std::collections::BTreeMap;
use std::fmt;

use crate::poly::{Monomial, PolyError, Polynomial};

use super::SosError;

/// Affine form `constant + Σ coeffs[k]·θ_k` over scalar unknowns θ.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Affine {
    pub constant: f64,
    pub coeffs: BTreeMap<usize, f64>,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Affine {
            constant: c,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn unknown(k: usize) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(k, 1.0);
        Affine {
            constant: 0.0,
            coeffs,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.coeffs.is_empty()
    }

    pub fn is_numeric(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn add_scaled(&mut self, other: &Affine, s: f64) {
        self.constant += s * other.constant;
        for (&k, &c) in &other.coeffs {
            let e = self.coeffs.entry(k).or_insert(0.0);
            *e += s * c;
            if *e == 0.0 {
                self.coeffs.remove(&k);
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Affine {
        let mut out = Affine::default();
        out.add_scaled(self, s);
        out
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().map(|(&k, &c)| c * values[k]).sum::<f64>()
    }
}

/// Polynomial whose coefficients are affine in the scalar unknowns of an SOS
/// program.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyExpr {
    nvars: usize,
    terms: BTreeMap<Monomial, Affine>,
}

impl PolyExpr {
    pub fn zero(nvars: usize) -> Self {
        PolyExpr {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::from_poly(&Polynomial::constant(nvars, c))
    }

    pub fn from_poly(p: &Polynomial) -> Self {
        let terms = p
            .terms()
            .map(|(m, c)| (m.clone(), Affine::constant(c)))
            .collect();
        PolyExpr {
            nvars: p.nvars(),
            terms,
        }
    }

    /// `θ_k · m`.
    pub fn unknown_times(k: usize, m: Monomial) -> Self {
        let nvars = m.nvars();
        let mut terms = BTreeMap::new();
        terms.insert(m, Affine::unknown(k));
        PolyExpr { nvars, terms }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Affine)> + '_ {
        self.terms.iter()
    }

    pub fn coeff(&self, m: &Monomial) -> Option<&Affine> {
        self.terms.get(m)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_numeric(&self) -> bool {
        self.terms.values().all(Affine::is_numeric)
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Unknowns referenced anywhere in the expression.
    pub fn unknowns(&self) -> Vec<usize> {
        let mut ks: Vec<usize> = self
            .terms
            .values()
            .flat_map(|a| a.coeffs.keys().copied())
            .collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    fn add_affine(&mut self, m: Monomial, a: &Affine, s: f64) {
        let slot = self.terms.entry(m.clone()).or_default();
        slot.add_scaled(a, s);
        if slot.is_zero() {
            self.terms.remove(&m);
        }
    }

    fn check(&self, other: &PolyExpr) -> Result<(), SosError> {
        if self.nvars != other.nvars {
            return Err(PolyError::NvarsMismatch {
                left: self.nvars,
                right: other.nvars,
            }
            .into());
        }
        Ok(())
    }

    pub fn add(&self, other: &PolyExpr) -> Result<PolyExpr, SosError> {
        self.check(other)?;
        let mut out = self.clone();
        for (m, a) in &other.terms {
            out.add_affine(m.clone(), a, 1.0);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &PolyExpr) -> Result<PolyExpr, SosError> {
        self.check(other)?;
        let mut out = self.clone();
        for (m, a) in &other.terms {
            out.add_affine(m.clone(), a, -1.0);
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> PolyExpr {
        if s == 0.0 {
            return PolyExpr::zero(self.nvars);
        }
        PolyExpr {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(m, a)| (m.clone(), a.scaled(s)))
                .collect(),
        }
    }

    /// Product with a numeric polynomial.
    pub fn mul_poly(&self, p: &Polynomial) -> Result<PolyExpr, SosError> {
        if p.nvars() != self.nvars {
            return Err(PolyError::NvarsMismatch {
                left: self.nvars,
                right: p.nvars(),
            }
            .into());
        }
        let mut out = PolyExpr::zero(self.nvars);
        for (m, a) in &self.terms {
            for (pm, c) in p.terms() {
                out.add_affine(m.mul(pm), a, c);
            }
        }
        Ok(out)
    }

    /// Product of two expressions; at most one of them may contain unknowns.
    pub fn try_mul(&self, other: &PolyExpr) -> Result<PolyExpr, SosError> {
        self.check(other)?;
        if other.is_numeric() {
            self.mul_poly(&other.to_numeric().expect("numeric"))
        } else if self.is_numeric() {
            other.mul_poly(&self.to_numeric().expect("numeric"))
        } else {
            Err(SosError::NonAffine)
        }
    }

    /// The numeric polynomial, if no unknowns appear.
    pub fn to_numeric(&self) -> Option<Polynomial> {
        if !self.is_numeric() {
            return None;
        }
        let mut p = Polynomial::zero(self.nvars);
        for (m, a) in &self.terms {
            p.add_term(m.clone(), a.constant);
        }
        Some(p)
    }

    pub fn derivative(&self, i: usize) -> PolyExpr {
        let mut out = PolyExpr::zero(self.nvars);
        for (m, a) in &self.terms {
            let e = m.exponents()[i];
            if e == 0 {
                continue;
            }
            let mut ex = m.exponents().to_vec();
            ex[i] -= 1;
            out.add_affine(Monomial::from_exponents(&ex), a, f64::from(e));
        }
        out
    }

    /// Substitute numeric values for every unknown.
    pub fn evaluate(&self, values: &[f64]) -> Polynomial {
        let mut p = Polynomial::zero(self.nvars);
        for (m, a) in &self.terms {
            p.add_term(m.clone(), a.eval(values));
        }
        p
    }

    /// Re-embed into a ring with more variables (new ones appended).
    pub fn extend_vars(&self, nvars: usize) -> PolyExpr {
        PolyExpr {
            nvars,
            terms: self
                .terms
                .iter()
                .map(|(m, a)| (m.extend(nvars), a.clone()))
                .collect(),
        }
    }
}

impl fmt::Display for PolyExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let mut first = true;
        for (m, a) in self.terms.iter().rev() {
            if !first {
                f.write_str(" + ")?;
            }
            first = false;
            write!(f, "({}", a.constant)?;
            for (k, c) in &a.coeffs {
                write!(f, " + {c}*t{k}")?;
            }
            f.write_str(")")?;
            for (i, &e) in m.exponents().iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "*x{}", i + 1)?,
                    _ => write!(f, "*x{}^{e}", i + 1)?,
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_products_are_rejected() {
        let a = PolyExpr::unknown_times(0, Monomial::var(1, 0));
        let b = PolyExpr::unknown_times(1, Monomial::one(1));
        assert!(matches!(a.try_mul(&b), Err(SosError::NonAffine)));
        let c = PolyExpr::from_poly(&Polynomial::parse("x1 + 2", 1).unwrap());
        let ac = a.try_mul(&c).unwrap();
        assert_eq!(ac.unknowns(), vec![0]);
        let at = ac.evaluate(&[3.0, 0.0]);
        assert_eq!(at, Polynomial::parse("3*x1^2 + 6*x1", 1).unwrap());
    }

    #[test]
    fn cancellation_removes_terms() {
        let a = PolyExpr::unknown_times(0, Monomial::var(2, 1));
        let z = a.sub(&a).unwrap();
        assert!(z.is_zero());
        assert_eq!(z.to_numeric(), Some(Polynomial::zero(2)));
    }

    #[test]
    fn derivative_tracks_unknowns() {
        let m = Monomial::from_exponents(&[2, 1]);
        let e = PolyExpr::unknown_times(4, m);
        let d = e.derivative(0);
        let mut vals = vec![0.0; 5];
        vals[4] = 1.5;
        assert_eq!(d.evaluate(&vals), Polynomial::parse("3*x1*x2", 2).unwrap());
        assert!(e.derivative(0).derivative(0).derivative(0).is_zero());
    }
}
