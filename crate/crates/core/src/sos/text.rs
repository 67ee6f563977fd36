//! Line-oriented text format for SOS programs.
//!
//! ```text
//! # comment
//! vars 1
//! decision V deg 2 free nonconst
//! scalar C
//! sos: -(d(V, x1)*(x1 - x1^3) + x1^2 - C)
//! min: C
//! ```
//!
//! Decision options after the kind: `nonconst` drops the constant monomial,
//! `even` keeps only even-degree monomials. `d(expr, xi)` differentiates.

use std::collections::HashMap;

use crate::poly::{parse_expression, Algebra, Monomial, VarNames};

use super::{Affine, DecisionSpec, PolyExpr, SosError, SosProgram};

/// Expression semantics over state variables, decision polynomials and
/// scalar unknowns.
pub struct ExprAlgebra<'a> {
    pub names: &'a VarNames,
    pub symbols: &'a HashMap<String, PolyExpr>,
}

impl Algebra for ExprAlgebra<'_> {
    type Value = PolyExpr;

    fn number(&mut self, v: f64) -> PolyExpr {
        PolyExpr::constant(self.names.len(), v)
    }

    fn ident(&mut self, name: &str) -> Result<PolyExpr, String> {
        if let Some(i) = self.names.lookup(name) {
            let m = Monomial::var(self.names.len(), i);
            return Ok(PolyExpr::from_poly(&crate::poly::Polynomial::term(m, 1.0)));
        }
        self.symbols
            .get(name)
            .cloned()
            .ok_or_else(|| format!("unknown name `{name}`"))
    }

    fn call(&mut self, name: &str, args: Vec<PolyExpr>) -> Result<PolyExpr, String> {
        if name != "d" || args.len() != 2 {
            return Err(format!("unknown function `{name}` (expected d(expr, var))"));
        }
        let var = args[1]
            .to_numeric()
            .filter(|p| p.len() == 1)
            .and_then(|p| {
                let (m, c) = p.terms().next()?;
                (c == 1.0 && m.degree() == 1).then(|| m.exponents().iter().position(|&e| e == 1))?
            })
            .ok_or("second argument of d() must be a variable")?;
        Ok(args[0].derivative(var))
    }

    fn add(&mut self, a: PolyExpr, b: PolyExpr) -> Result<PolyExpr, String> {
        a.add(&b).map_err(|e| e.to_string())
    }

    fn sub(&mut self, a: PolyExpr, b: PolyExpr) -> Result<PolyExpr, String> {
        a.sub(&b).map_err(|e| e.to_string())
    }

    fn mul(&mut self, a: PolyExpr, b: PolyExpr) -> Result<PolyExpr, String> {
        a.try_mul(&b).map_err(|e| e.to_string())
    }

    fn neg(&mut self, a: PolyExpr) -> PolyExpr {
        a.scale(-1.0)
    }

    fn pow(&mut self, a: PolyExpr, k: u32) -> Result<PolyExpr, String> {
        let mut out = PolyExpr::constant(a.nvars(), 1.0);
        for _ in 0..k {
            out = out.try_mul(&a).map_err(|e| e.to_string())?;
        }
        Ok(out)
    }
}

pub fn parse_program(text: &str) -> Result<SosProgram, SosError> {
    let mut prog: Option<SosProgram> = None;
    let mut symbols: HashMap<String, PolyExpr> = HashMap::new();

    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let perr = |message: String| SosError::Program {
            line: line_no,
            message,
        };
        let words: Vec<&str> = line.split_whitespace().collect();

        if words[0] == "vars" {
            if prog.is_some() {
                return Err(perr("duplicate `vars` line".into()));
            }
            let n: usize = words
                .get(1)
                .and_then(|w| w.parse().ok())
                .filter(|&n| n > 0)
                .ok_or_else(|| perr("expected `vars <n>` with n > 0".into()))?;
            prog = Some(SosProgram::new(n));
            continue;
        }
        let p = prog
            .as_mut()
            .ok_or_else(|| perr("the first statement must be `vars <n>`".into()))?;

        let check_name = |name: &str, symbols: &HashMap<String, PolyExpr>| {
            let ok = name.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
                && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                && p.names().lookup(name).is_none()
                && name != "d"
                && !symbols.contains_key(name);
            if ok {
                Ok(())
            } else {
                Err(perr(format!("invalid or duplicate name `{name}`")))
            }
        };

        match words[0] {
            "decision" => {
                // decision NAME deg D free|sos [nonconst] [even]
                if words.len() < 5 || words[2] != "deg" {
                    return Err(perr("expected `decision <name> deg <d> free|sos`".into()));
                }
                let name = words[1];
                check_name(name, &symbols)?;
                let deg: u32 = words[3]
                    .parse()
                    .map_err(|_| perr(format!("bad degree `{}`", words[3])))?;
                let mut spec = match words[4] {
                    "free" => DecisionSpec::free(deg),
                    "sos" => DecisionSpec::sos(deg),
                    other => return Err(perr(format!("unknown decision kind `{other}`"))),
                };
                for opt in &words[5..] {
                    spec = match *opt {
                        "nonconst" => spec.without_constant(),
                        "even" => spec.even(),
                        other => return Err(perr(format!("unknown option `{other}`"))),
                    };
                }
                let d = p.add_decision(name, &spec).map_err(|e| perr(e.to_string()))?;
                symbols.insert(name.to_string(), d.expr);
            }
            "scalar" => {
                if words.len() != 2 {
                    return Err(perr("expected `scalar <name>`".into()));
                }
                check_name(words[1], &symbols)?;
                let k = p.add_scalar(words[1]);
                symbols.insert(words[1].to_string(), p.scalar_expr(k));
            }
            _ => {
                let (head, body) = line
                    .split_once(':')
                    .ok_or_else(|| perr(format!("unrecognized statement `{line}`")))?;
                let names = p.names().clone();
                let mut alg = ExprAlgebra {
                    names: &names,
                    symbols: &symbols,
                };
                let expr = parse_expression(body, &mut alg).map_err(|mut e| {
                    e.column += head.len() + 1;
                    SosError::Parse {
                        line: line_no,
                        source: e,
                    }
                })?;
                let label = format!("line {line_no}");
                match head.trim() {
                    "sos" => {
                        p.add_sos(&label, expr).map_err(|e| perr(e.to_string()))?;
                    }
                    "zero" => {
                        p.add_zero(&label, expr).map_err(|e| perr(e.to_string()))?;
                    }
                    sense @ ("min" | "max") => {
                        let obj = scalar_objective(&expr)
                            .ok_or_else(|| perr("objective must be a constant-in-x affine form".into()))?;
                        if sense == "min" {
                            p.minimize(obj);
                        } else {
                            p.maximize(obj);
                        }
                    }
                    other => return Err(perr(format!("unknown statement `{other}`"))),
                }
            }
        }
    }
    prog.ok_or(SosError::Program {
        line: 1,
        message: "empty program".into(),
    })
}

fn scalar_objective(e: &PolyExpr) -> Option<Affine> {
    let mut out = Affine::default();
    for (m, a) in e.terms() {
        if !m.is_one() {
            return None;
        }
        out = a.clone();
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::SolveOptions;

    #[test]
    fn bound_program_from_text() {
        let text = "\
# upper bound for x' = x - x^3 with cost x^2
vars 1
decision V deg 2 free nonconst
scalar C
sos: -(d(V, x1)*(x1 - x1^3) + x1^2 - C)
min: C
";
        let prog = parse_program(text).unwrap();
        assert_eq!(prog.num_unknowns(), 3);
        let cert = prog.solve(&SolveOptions::default()).unwrap();
        assert!((cert.objective - 1.0).abs() < 1e-6, "{}", cert.objective);
    }

    #[test]
    fn errors_carry_lines() {
        let r = parse_program("vars 1\nscalar C\nsos: C + y\n");
        match r {
            Err(SosError::Parse { line, source }) => {
                assert_eq!(line, 3);
                assert_eq!(source.column, 10);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_program("scalar C\n"),
            Err(SosError::Program { line: 1, .. })
        ));
        assert!(matches!(
            parse_program("vars 1\nscalar x1\n"),
            Err(SosError::Program { line: 2, .. })
        ));
        assert!(matches!(
            parse_program("vars 1\ndecision V deg 2 free\nscalar C\nsos: V*C\n"),
            Err(SosError::Parse { line: 4, .. })
        ));
    }
}
