//! Controlled polynomial dynamics `ẋ = f(x) + G(x)u + H(x)u̇` with cost
//! pieces `Φ0(x)` and `Ψ(x)`, and their text file format:
//!
//! ```text
//! vars 1 1          # state dimension n, control dimension m
//! f:
//!   x1 - x1^3
//! G: 1              # n rows of m comma-separated entries
//! H: 0              # optional, zero by default
//! phi0: x1^2
//! psi: 1            # optional, identity by default
//! ball: beta 50     # optional, certification ball xᵀx <= 2β
//! ```

use std::fmt::Write;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::poly::{PolyError, PolyMatrix, PolyVector, Polynomial, VarNames};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid system: {0}")]
    Invalid(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolySystem {
    pub f: PolyVector,
    pub g: PolyMatrix,
    pub h: PolyMatrix,
    pub phi0: Polynomial,
    pub psi: PolyMatrix,
    /// Radius parameter β of the ball xᵀx <= 2β, when one is attached.
    pub ball: Option<f64>,
}

impl PolySystem {
    /// System with `H = 0`, `Ψ = I` and no ball.
    pub fn new(f: PolyVector, g: PolyMatrix, phi0: Polynomial) -> Result<Self, SystemError> {
        let n = f.len();
        let m = g.cols();
        let sys = PolySystem {
            h: PolyMatrix::zeros(n, n, m),
            psi: PolyMatrix::identity(n, m),
            f,
            g,
            phi0,
            ball: None,
        };
        sys.validate()?;
        Ok(sys)
    }

    /// Autonomous system (no control input).
    pub fn autonomous(f: PolyVector, phi0: Polynomial) -> Result<Self, SystemError> {
        let n = f.len();
        Self::new(f, PolyMatrix::zeros(n, n, 0), phi0)
    }

    pub fn with_h(mut self, h: PolyMatrix) -> Result<Self, SystemError> {
        self.h = h;
        self.validate()?;
        Ok(self)
    }

    pub fn with_psi(mut self, psi: PolyMatrix) -> Result<Self, SystemError> {
        self.psi = psi;
        self.validate()?;
        Ok(self)
    }

    pub fn with_ball(mut self, beta: f64) -> Result<Self, SystemError> {
        self.ball = Some(beta);
        self.validate()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn m(&self) -> usize {
        self.g.cols()
    }

    pub fn has_h(&self) -> bool {
        !self.h.is_zero()
    }

    pub fn validate(&self) -> Result<(), SystemError> {
        let n = self.n();
        let m = self.m();
        let inv = |s: String| Err(SystemError::Invalid(s));
        if n == 0 {
            return inv("state dimension must be positive".into());
        }
        if self.f.nvars() != n
            || self.g.nvars() != n
            || self.h.nvars() != n
            || self.phi0.nvars() != n
            || self.psi.nvars() != n
        {
            return inv(format!("all polynomials must be in the {n} state variables"));
        }
        if self.g.rows() != n {
            return inv(format!("G must be {n}x{m}"));
        }
        if self.h.rows() != n || self.h.cols() != m {
            return inv(format!("H must be {n}x{m}"));
        }
        if self.psi.rows() != m || self.psi.cols() != m {
            return inv(format!("psi must be {m}x{m}"));
        }
        if !self.psi.is_symmetric() {
            return inv("psi must be symmetric".into());
        }
        if m > 0 {
            let at0 = self.psi.evaluate(&vec![0.0; n])?;
            let mat = DMatrix::from_row_slice(m, m, &at0);
            if mat.cholesky().is_none() {
                return inv("psi must be positive definite at the origin".into());
            }
        }
        if let Some(beta) = self.ball {
            if !(beta > 0.0 && beta.is_finite()) {
                return inv("ball beta must be positive".into());
            }
        }
        Ok(())
    }

    /// `f(x) + G(x)u(x)` for a polynomial feedback `u`.
    pub fn substitute_controls(&self, u: &PolyVector) -> Result<PolyVector, SystemError> {
        if u.len() != self.m() {
            return Err(PolyError::DimensionMismatch {
                expected: self.m(),
                found: u.len(),
            }
            .into());
        }
        if u.nvars() != self.n() {
            return Err(PolyError::NvarsMismatch {
                left: self.n(),
                right: u.nvars(),
            }
            .into());
        }
        Ok(self.f.checked_add(&self.g.mul_vec(u)?)?)
    }

    /// Cost density `Φ0(x) + u(x)ᵀΨ(x)u(x)/ε` pieces: returns `uᵀΨu`.
    pub fn control_penalty(&self, u: &PolyVector) -> Result<Polynomial, SystemError> {
        Ok(u.dot(&self.psi.mul_vec(u)?)?)
    }

    pub fn to_text(&self) -> String {
        let names = VarNames::state(self.n());
        let mut out = String::new();
        writeln!(out, "vars {} {}", self.n(), self.m()).unwrap();
        writeln!(out, "f:").unwrap();
        for p in &self.f {
            writeln!(out, "  {}", p.display_with(&names)).unwrap();
        }
        let mat = |out: &mut String, key: &str, a: &PolyMatrix| {
            writeln!(out, "{key}:").unwrap();
            for i in 0..a.rows() {
                let row: Vec<String> = (0..a.cols())
                    .map(|j| a.get(i, j).display_with(&names).to_string())
                    .collect();
                writeln!(out, "  {}", row.join(", ")).unwrap();
            }
        };
        if self.m() > 0 {
            mat(&mut out, "G", &self.g);
            if self.has_h() {
                mat(&mut out, "H", &self.h);
            }
        }
        writeln!(out, "phi0: {}", self.phi0.display_with(&names)).unwrap();
        if self.m() > 0 {
            mat(&mut out, "psi", &self.psi);
        }
        if let Some(beta) = self.ball {
            writeln!(out, "ball: beta {beta:?}").unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, SystemError> {
        Parser::new(text).run()
    }
}

struct Line<'a> {
    no: usize,
    text: &'a str,
    /// Byte offset of `text` within the raw line.
    offset: usize,
}

struct Parser<'a> {
    lines: Vec<Line<'a>>,
    pos: usize,
}

fn perr(line: usize, column: usize, message: impl Into<String>) -> SystemError {
    SystemError::Parse {
        line,
        column,
        message: message.into(),
    }
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let body = raw.split('#').next().unwrap_or("");
            let trimmed = body.trim_start();
            let offset = body.len() - trimmed.len();
            let trimmed = trimmed.trim_end();
            if !trimmed.is_empty() {
                lines.push(Line {
                    no: i + 1,
                    text: trimmed,
                    offset,
                });
            }
        }
        Parser { lines, pos: 0 }
    }

    fn poly(&self, s: &str, line: usize, col0: usize, names: &VarNames) -> Result<Polynomial, SystemError> {
        Polynomial::parse_with(s, names).map_err(|e| match e {
            PolyError::Parse(pe) => perr(line, col0 + pe.column, pe.message),
            other => perr(line, col0 + 1, other.to_string()),
        })
    }

    /// Read `rows` lines of `cols` comma-separated polynomials. The first row
    /// may sit on the header line after the colon.
    fn rows(
        &mut self,
        inline: Option<(&'a str, usize, usize)>,
        rows: usize,
        cols: usize,
        names: &VarNames,
        key: &str,
        header_line: usize,
    ) -> Result<Vec<Vec<Polynomial>>, SystemError> {
        let mut out = Vec::with_capacity(rows);
        let mut pending = inline;
        while out.len() < rows {
            let (text, line, col0) = match pending.take() {
                Some(x) => x,
                None => {
                    let Some(l) = self.lines.get(self.pos) else {
                        return Err(perr(
                            header_line,
                            1,
                            format!("`{key}` needs {rows} rows, found {}", out.len()),
                        ));
                    };
                    if is_header(l.text) {
                        return Err(perr(
                            l.no,
                            l.offset + 1,
                            format!("`{key}` needs {rows} rows, found {}", out.len()),
                        ));
                    }
                    self.pos += 1;
                    (l.text, l.no, l.offset)
                }
            };
            let mut row = Vec::with_capacity(cols);
            let mut start = 0;
            for piece in text.split(',') {
                row.push(self.poly(piece, line, col0 + start, names)?);
                start += piece.len() + 1;
            }
            if row.len() != cols {
                return Err(perr(
                    line,
                    col0 + 1,
                    format!("`{key}` rows need {cols} entries, found {}", row.len()),
                ));
            }
            out.push(row);
        }
        Ok(out)
    }

    fn run(mut self) -> Result<PolySystem, SystemError> {
        let first = self
            .lines
            .first()
            .ok_or_else(|| perr(1, 1, "empty system file"))?;
        let (first_no, first_offset, first_text) = (first.no, first.offset, first.text);
        let words: Vec<&str> = first_text.split_whitespace().collect();
        if words.first() != Some(&"vars") || words.len() != 3 {
            return Err(perr(first_no, first_offset + 1, "expected `vars <n> <m>`"));
        }
        let n: usize = words[1]
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| perr(first_no, first_offset + 6, "bad state dimension"))?;
        let m: usize = words[2]
            .parse()
            .map_err(|_| perr(first_no, first_offset + 7 + words[1].len(), "bad control dimension"))?;
        self.pos = 1;
        let names = VarNames::state(n);

        let mut f = None;
        let mut g = None;
        let mut h = None;
        let mut phi0 = None;
        let mut psi = None;
        let mut ball = None;
        while let Some(l) = self.lines.get(self.pos) {
            self.pos += 1;
            let (no, offset, text) = (l.no, l.offset, l.text);
            let Some((key, rest)) = text.split_once(':') else {
                return Err(perr(no, offset + 1, format!("expected a section header, found `{text}`")));
            };
            let key = key.trim();
            let rest_col = offset + key.len() + 1;
            let inline = (!rest.trim().is_empty()).then_some((rest, no, rest_col));
            let dup = |name: &str| perr(no, offset + 1, format!("duplicate section `{name}`"));
            match key {
                "f" => {
                    if f.is_some() {
                        return Err(dup(key));
                    }
                    let rows = self.rows(inline, n, 1, &names, key, no)?;
                    f = Some(rows.into_iter().map(|mut r| r.remove(0)).collect::<Vec<_>>());
                }
                "G" | "H" => {
                    let slot = if key == "G" { &mut g } else { &mut h };
                    if slot.is_some() {
                        return Err(dup(key));
                    }
                    if m == 0 {
                        return Err(perr(no, offset + 1, format!("`{key}` given but m = 0")));
                    }
                    *slot = Some(self.rows(inline, n, m, &names, key, no)?);
                }
                "phi0" => {
                    if phi0.is_some() {
                        return Err(dup(key));
                    }
                    let rows = self.rows(inline, 1, 1, &names, key, no)?;
                    phi0 = rows.into_iter().next().and_then(|mut r| r.pop());
                }
                "psi" => {
                    if psi.is_some() {
                        return Err(dup(key));
                    }
                    psi = Some(self.rows(inline, m, m, &names, key, no)?);
                }
                "ball" => {
                    let w: Vec<&str> = rest.split_whitespace().collect();
                    if w.len() != 2 || w[0] != "beta" {
                        return Err(perr(no, rest_col + 1, "expected `ball: beta <value>`"));
                    }
                    let beta: f64 = w[1]
                        .parse()
                        .map_err(|_| perr(no, rest_col + 1, format!("bad number `{}`", w[1])))?;
                    ball = Some(beta);
                }
                other => {
                    return Err(perr(no, offset + 1, format!("unknown section `{other}`")));
                }
            }
        }

        let f = f.ok_or_else(|| perr(first_no, 1, "missing `f` section"))?;
        let phi0 = phi0.ok_or_else(|| perr(first_no, 1, "missing `phi0` section"))?;
        let g = match g {
            Some(rows) => PolyMatrix::from_rows(n, rows)?,
            None if m == 0 => PolyMatrix::zeros(n, n, 0),
            None => return Err(perr(first_no, 1, "missing `G` section")),
        };
        let mut sys = PolySystem::new(PolyVector::from_vec(n, f)?, g, phi0)?;
        if let Some(rows) = h {
            sys = sys.with_h(PolyMatrix::from_rows(n, rows)?)?;
        }
        if let Some(rows) = psi {
            sys = sys.with_psi(PolyMatrix::from_rows(n, rows)?)?;
        }
        if let Some(beta) = ball {
            sys = sys.with_ball(beta)?;
        }
        Ok(sys)
    }
}

fn is_header(text: &str) -> bool {
    match text.split_once(':') {
        Some((k, _)) => matches!(k.trim(), "f" | "G" | "H" | "phi0" | "psi" | "ball"),
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str, n: usize) -> Polynomial {
        Polynomial::parse(s, n).unwrap()
    }

    fn b1() -> PolySystem {
        PolySystem::parse("vars 1 1\nf: x1 - x1^3\nG: 1\nphi0: x1^2\n").unwrap()
    }

    #[test]
    fn substitution_examples() {
        let sys = b1();
        let u = PolyVector::from_vec(1, vec![p("-0.5*x1", 1)]).unwrap();
        let cl = sys.substitute_controls(&u).unwrap();
        assert_eq!(cl[0], p("0.5*x1 - x1^3", 1));

        let zero = PolyVector::zeros(1, 1);
        assert_eq!(sys.substitute_controls(&zero).unwrap(), sys.f);

        let sys = PolySystem::parse("vars 1 1\nf: 0\nG: 1\nphi0: 0\n").unwrap();
        let u = PolyVector::from_vec(1, vec![p("x1", 1)]).unwrap();
        assert_eq!(sys.substitute_controls(&u).unwrap()[0], p("x1", 1));

        let bad = PolyVector::zeros(1, 2);
        assert!(sys.substitute_controls(&bad).is_err());
    }

    #[test]
    fn multi_line_sections_round_trip() {
        let text = "\
# forced oscillator
vars 2 1
f:
  x2
  (1 - x1^2)*x2 - x1
G:
  0
  1
H:
  0
  0.25*x1
phi0: x1^2 + x2^2
psi: 2
ball: beta 12.5
";
        let sys = PolySystem::parse(text).unwrap();
        assert_eq!(sys.n(), 2);
        assert_eq!(sys.m(), 1);
        assert_eq!(sys.f[1], p("x2 - x1^2*x2 - x1", 2));
        assert_eq!(sys.h.get(1, 0), &p("0.25*x1", 2));
        assert_eq!(sys.ball, Some(12.5));
        let again = PolySystem::parse(&sys.to_text()).unwrap();
        assert_eq!(sys, again);
    }

    #[test]
    fn errors_point_at_location() {
        let err = PolySystem::parse("vars 1 1\nf: x1 - x3\nG: 1\nphi0: x1\n").unwrap_err();
        match err {
            SystemError::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, 9);
            }
            other => panic!("{other:?}"),
        }
        let err = PolySystem::parse("vars 2 1\nf:\n  x1\nG: 1\nphi0: x1\n").unwrap_err();
        assert!(matches!(err, SystemError::Parse { line: 4, .. }), "{err:?}");
        let err = PolySystem::parse("vars 1 1\nf: x1\nG: 1, 2\nphi0: x1\n").unwrap_err();
        assert!(matches!(err, SystemError::Parse { line: 3, .. }), "{err:?}");
        let err = PolySystem::parse("vars 1 1\nf: x1\nG: 1\nphi0: x1\npsi: -1\n").unwrap_err();
        assert!(matches!(err, SystemError::Invalid(_)), "{err:?}");
    }

    #[test]
    fn autonomous_systems() {
        let sys = PolySystem::parse("vars 1 0\nf: -x1\nphi0: x1^2\n").unwrap();
        assert_eq!(sys.m(), 0);
        assert_eq!(PolySystem::parse(&sys.to_text()).unwrap(), sys);
    }
}
