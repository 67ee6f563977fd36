//! Controller files.
//!
//! Each input is written as `u = c + kᵀx + xᵀMx + extra(x)` with `M`
//! symmetric, so the linear and quadratic parts are plain number tables and
//! only terms of degree three or more (and a constant) fall into `extra`.
//!
//! ```text
//! vars 2 1
//! c0 7.944
//! c1 -6.03
//! input 1
//! k: 0.039, -1.231
//! M:
//!   0, 0
//!   0, 0
//! extra: 0
//! ```
//!
//! Numbers may be separated by commas, `&` or whitespace and a trailing
//! `\\` is ignored, so tables copied from typeset matrices read directly.
//! `k:` may span several lines; `M:` takes one line per row.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::poly::{Monomial, PolyError, PolyVector, Polynomial};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// One input split into constant, linear, quadratic and remaining parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlLaw {
    pub k: DVector<f64>,
    pub m: DMatrix<f64>,
    /// Constant and degree ≥ 3 terms.
    pub extra: Polynomial,
}

impl ControlLaw {
    pub fn from_polynomial(p: &Polynomial) -> Self {
        let n = p.nvars();
        let mut k = DVector::zeros(n);
        let mut m = DMatrix::zeros(n, n);
        let mut extra = Polynomial::zero(n);
        for (mono, c) in p.terms() {
            let e = mono.exponents();
            match mono.degree() {
                1 => k[e.iter().position(|&v| v == 1).unwrap()] = c,
                2 => {
                    let idx: Vec<usize> = (0..n).filter(|&i| e[i] > 0).collect();
                    if idx.len() == 1 {
                        m[(idx[0], idx[0])] = c;
                    } else {
                        m[(idx[0], idx[1])] = c / 2.0;
                        m[(idx[1], idx[0])] = c / 2.0;
                    }
                }
                _ => extra.add_term(mono.clone(), c),
            }
        }
        ControlLaw { k, m, extra }
    }

    pub fn to_polynomial(&self) -> Polynomial {
        let n = self.k.len();
        let mut p = self.extra.clone();
        for i in 0..n {
            p.add_term(Monomial::var(n, i), self.k[i]);
            for j in 0..n {
                let mono = Monomial::var(n, i).mul(&Monomial::var(n, j));
                p.add_term(mono, self.m[(i, j)]);
            }
        }
        p
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        self.k.dot(&xv) + xv.dot(&(&self.m * &xv)) + self.extra.eval(x)
    }
}

/// A synthesized controller `u1` with the bound coefficients it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    pub laws: Vec<ControlLaw>,
    pub c0: Option<f64>,
    pub c1: Option<f64>,
}

impl Controller {
    pub fn from_polys(u1: &PolyVector) -> Self {
        Controller {
            laws: u1.iter().map(ControlLaw::from_polynomial).collect(),
            c0: None,
            c1: None,
        }
    }

    pub fn nvars(&self) -> usize {
        self.laws.first().map_or(0, |l| l.k.len())
    }

    pub fn m(&self) -> usize {
        self.laws.len()
    }

    pub fn to_polys(&self) -> Result<PolyVector, ControllerError> {
        Ok(PolyVector::from_vec(
            self.nvars(),
            self.laws.iter().map(ControlLaw::to_polynomial).collect(),
        )?)
    }

    /// Text form; numbers use the shortest exact representation so reading
    /// the file back gives identical values.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "vars {} {}", self.nvars(), self.m()).unwrap();
        if let Some(c) = self.c0 {
            writeln!(out, "c0 {c:?}").unwrap();
        }
        if let Some(c) = self.c1 {
            writeln!(out, "c1 {c:?}").unwrap();
        }
        for (j, law) in self.laws.iter().enumerate() {
            writeln!(out, "input {}", j + 1).unwrap();
            let row = |v: &mut dyn Iterator<Item = f64>| {
                v.map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
            };
            writeln!(out, "k: {}", row(&mut law.k.iter().copied())).unwrap();
            writeln!(out, "M:").unwrap();
            for i in 0..law.m.nrows() {
                writeln!(out, "  {}", row(&mut law.m.row(i).iter().copied())).unwrap();
            }
            writeln!(out, "extra: {}", law.extra).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ControllerError> {
        Reader::default().run(text)
    }
}

fn numbers(s: &str) -> Result<Vec<f64>, String> {
    s.trim()
        .trim_end_matches("\\\\")
        .split(|c: char| c == ',' || c == '&' || c.is_whitespace())
        .filter(|w| !w.is_empty())
        .map(|w| w.parse::<f64>().map_err(|_| format!("bad number `{w}`")))
        .collect()
}

#[derive(PartialEq)]
enum Section {
    None,
    K,
    M,
}

/// `k` entries, `M` rows and the extra polynomial as read.
type RawLaw = (Vec<f64>, Vec<Vec<f64>>, Option<Polynomial>);

#[derive(Default)]
struct Reader {
    n: usize,
    m: usize,
    laws: Vec<RawLaw>,
    c0: Option<f64>,
    c1: Option<f64>,
}

impl Reader {
    fn run(mut self, text: &str) -> Result<Controller, ControllerError> {
        let mut section = Section::None;
        let mut seen_vars = false;
        for (ln, raw) in text.lines().enumerate() {
            let line_no = ln + 1;
            let err = |message: String| ControllerError::Parse { line: line_no, message };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (head, rest) = match line.split_once(':') {
                Some((h, r)) => (h.trim(), Some(r)),
                None => (line.split_whitespace().next().unwrap(), None),
            };
            match (head, rest) {
                ("vars", None) => {
                    let w: Vec<usize> = line
                        .split_whitespace()
                        .skip(1)
                        .map(|w| w.parse())
                        .collect::<Result<_, _>>()
                        .map_err(|_| err("expected `vars <n> <m>`".into()))?;
                    if w.len() != 2 || w[0] == 0 || w[1] == 0 {
                        return Err(err("expected `vars <n> <m>` with n, m > 0".into()));
                    }
                    (self.n, self.m) = (w[0], w[1]);
                    seen_vars = true;
                    section = Section::None;
                }
                ("c0" | "c1", None) => {
                    let v = line[2..]
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| err(format!("bad value for {head}")))?;
                    if head == "c0" {
                        self.c0 = Some(v);
                    } else {
                        self.c1 = Some(v);
                    }
                }
                ("input", None) => {
                    if !seen_vars {
                        return Err(err("`vars` must come first".into()));
                    }
                    let j: usize = line[5..]
                        .trim()
                        .parse()
                        .map_err(|_| err("expected `input <j>`".into()))?;
                    if j != self.laws.len() + 1 || j > self.m {
                        return Err(err(format!("unexpected input index {j}")));
                    }
                    self.laws.push((Vec::new(), Vec::new(), None));
                    section = Section::None;
                }
                ("k", Some(r)) => {
                    self.current(line_no)?.0.extend(numbers(r).map_err(err)?);
                    section = Section::K;
                }
                ("M", Some(r)) => {
                    let row = numbers(r).map_err(err)?;
                    if !row.is_empty() {
                        self.current(line_no)?.1.push(row);
                    }
                    section = Section::M;
                }
                ("extra", Some(r)) => {
                    let n = self.n;
                    let p = Polynomial::parse(r, n).map_err(|e| err(e.to_string()))?;
                    self.current(line_no)?.2 = Some(p);
                    section = Section::None;
                }
                _ => {
                    let row = numbers(line).map_err(|_| err(format!("unrecognized line `{line}`")))?;
                    match section {
                        Section::K => self.current(line_no)?.0.extend(row),
                        Section::M => self.current(line_no)?.1.push(row),
                        Section::None => return Err(err(format!("unrecognized line `{line}`"))),
                    }
                }
            }
        }
        self.finish()
    }

    fn current(&mut self, line: usize) -> Result<&mut RawLaw, ControllerError> {
        if self.laws.is_empty() {
            if self.m == 1 {
                self.laws.push((Vec::new(), Vec::new(), None));
            } else {
                return Err(ControllerError::Parse {
                    line,
                    message: "expected `input <j>` before coefficients".into(),
                });
            }
        }
        Ok(self.laws.last_mut().unwrap())
    }

    fn finish(self) -> Result<Controller, ControllerError> {
        let n = self.n;
        let end = |message: String| ControllerError::Parse { line: 0, message };
        if n == 0 {
            return Err(end("missing `vars` line".into()));
        }
        if self.laws.len() != self.m {
            return Err(end(format!("expected {} inputs, found {}", self.m, self.laws.len())));
        }
        let mut laws = Vec::with_capacity(self.m);
        for (j, (k, rows, extra)) in self.laws.into_iter().enumerate() {
            let k = match k.len() {
                0 => DVector::zeros(n),
                len if len == n => DVector::from_vec(k),
                len => return Err(end(format!("input {}: k has {len} entries, expected {n}", j + 1))),
            };
            let m = if rows.is_empty() {
                DMatrix::zeros(n, n)
            } else {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(end(format!("input {}: M must be {n}x{n}", j + 1)));
                }
                DMatrix::from_fn(n, n, |a, b| rows[a][b])
            };
            let scale = m.amax().max(1.0);
            if (&m - m.transpose()).amax() > 1e-12 * scale {
                return Err(end(format!("input {}: M is not symmetric", j + 1)));
            }
            laws.push(ControlLaw {
                k,
                m,
                extra: extra.unwrap_or_else(|| Polynomial::zero(n)),
            });
        }
        Ok(Controller {
            laws,
            c0: self.c0,
            c1: self.c1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_and_rebuild() {
        let p = Polynomial::parse("0.5 - 2*x1 + 3*x1*x2 + x2^2 + x1^3", 2).unwrap();
        let law = ControlLaw::from_polynomial(&p);
        assert_eq!(law.k.as_slice(), &[-2.0, 0.0]);
        assert_eq!(law.m[(0, 1)], 1.5);
        assert_eq!(law.m[(1, 1)], 1.0);
        assert_eq!(law.extra.len(), 2);
        assert_eq!(law.to_polynomial(), p);
        assert!((law.eval(&[0.3, -1.1]) - p.eval(&[0.3, -1.1])).abs() < 1e-14);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let u = PolyVector::from_vec(
            2,
            vec![
                Polynomial::parse("0.1*x1 - 0.3333333333333333*x2 + 0.7*x1*x2", 2).unwrap(),
                Polynomial::parse("x2^2 + 1e-17*x1^3 + 0.25", 2).unwrap(),
            ],
        )
        .unwrap();
        let mut c = Controller::from_polys(&u);
        c.c0 = Some(7.944313678338868);
        c.c1 = Some(-1.0 / 7.0);
        let back = Controller::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_polys().unwrap(), u);
    }

    #[test]
    fn typeset_tables() {
        let text = "vars 3 1\nk:\n -0.1&\n 1.5&\n 2\nM:\n 1 & 0.5 & 0\\\\\n 0.5 & 2 & 0\\\\\n 0 & 0 & 3\n";
        let c = Controller::parse(text).unwrap();
        assert_eq!(c.laws[0].k.as_slice(), &[-0.1, 1.5, 2.0]);
        assert_eq!(c.laws[0].m[(1, 0)], 0.5);
        assert_eq!(c.laws[0].m[(2, 2)], 3.0);
    }

    #[test]
    fn malformed_files() {
        assert!(Controller::parse("k: 1\n").is_err());
        assert!(Controller::parse("vars 2 1\nk: 1\n").is_err());
        assert!(Controller::parse("vars 2 1\nM:\n1 2\n3 4\n").is_err());
        assert!(matches!(
            Controller::parse("vars 1 1\nk: 1 zz\n"),
            Err(ControllerError::Parse { line: 2, .. })
        ));
        assert!(Controller::parse("vars 1 2\ninput 1\nk: 1\n").is_err());
    }
}
