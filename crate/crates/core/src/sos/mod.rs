//! Sum-of-squares programs and their compilation to semidefinite programs.
//!
//! A [`SosProgram`] holds scalar unknowns θ, decision polynomials whose
//! coefficients are unknowns, and constraints of the form "expression is SOS"
//! or "expression = 0" where each expression is a [`PolyExpr`], affine in θ.

mod basis;
mod compile;
mod expr;
mod text;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::poly::{Monomial, ParseError, PolyError, Polynomial, VarNames};
use crate::sdp::{SdpError, SdpStatus};

pub use basis::{gram_basis, invariant_sign_groups, monomial_basis, split_by_parity, Parity};
pub use compile::{
    compile, extract_certificate, Certificate, CompiledProgram, GramBlock, GramCertificate,
    EIG_TOL, MATCH_TOL,
};
pub use expr::{Affine, PolyExpr};
pub use text::{parse_program, ExprAlgebra};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SosError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ParseError },
    #[error("line {line}: {message}")]
    Program { line: usize, message: String },
    #[error("constraint is not affine in the unknowns")]
    NonAffine,
    #[error("constraint `{label}` has odd top degree {degree} with fixed leading terms")]
    OddDegree { label: String, degree: u32 },
    #[error("constraint `{label}` has an empty Gram basis")]
    EmptyBasis { label: String },
    #[error("invalid decision `{name}`: {reason}")]
    BadDecision { name: String, reason: String },
    #[error("program is infeasible ({status})")]
    Infeasible { status: SdpStatus },
    #[error("objective is unbounded ({status})")]
    Unbounded { status: SdpStatus },
    #[error("solver failed ({status})")]
    SolverFailed { status: SdpStatus },
    #[error("certificate for `{label}` invalid: residual {residual:.3e}, min eigenvalue {min_eig:.3e}")]
    CertificateInvalid {
        label: String,
        residual: f64,
        min_eig: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecisionKind {
    Free,
    Sos,
}

/// Shape of a decision polynomial's monomial basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionSpec {
    /// Variables the polynomial may depend on; `None` means all.
    pub vars: Option<Vec<usize>>,
    pub min_degree: u32,
    pub max_degree: u32,
    pub parity: Parity,
    pub kind: DecisionKind,
}

impl DecisionSpec {
    pub fn free(max_degree: u32) -> Self {
        DecisionSpec {
            vars: None,
            min_degree: 0,
            max_degree,
            parity: Parity::All,
            kind: DecisionKind::Free,
        }
    }

    pub fn sos(max_degree: u32) -> Self {
        DecisionSpec {
            kind: DecisionKind::Sos,
            ..Self::free(max_degree)
        }
    }

    pub fn without_constant(mut self) -> Self {
        self.min_degree = self.min_degree.max(1);
        self
    }

    pub fn in_vars(mut self, vars: Vec<usize>) -> Self {
        self.vars = Some(vars);
        self
    }

    pub fn even(mut self) -> Self {
        self.parity = Parity::Even;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecisionPoly {
    pub name: String,
    pub basis: Vec<Monomial>,
    pub first_unknown: usize,
    pub kind: DecisionKind,
}

impl DecisionPoly {
    pub fn unknowns(&self) -> std::ops::Range<usize> {
        self.first_unknown..self.first_unknown + self.basis.len()
    }
}

/// Handle to a decision polynomial together with its symbolic expression.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub id: usize,
    pub expr: PolyExpr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    Sos,
    Zero,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SosConstraint {
    pub label: String,
    pub expr: PolyExpr,
    pub kind: ConstraintKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SosProgram {
    nvars: usize,
    names: VarNames,
    unknown_names: Vec<String>,
    decisions: Vec<DecisionPoly>,
    constraints: Vec<SosConstraint>,
    objective: Option<(Sense, Affine)>,
    groups: Vec<Vec<usize>>,
}

impl SosProgram {
    pub fn new(nvars: usize) -> Self {
        Self::with_names(VarNames::state(nvars))
    }

    pub fn with_names(names: VarNames) -> Self {
        SosProgram {
            nvars: names.len(),
            names,
            unknown_names: Vec::new(),
            decisions: Vec::new(),
            constraints: Vec::new(),
            objective: None,
            groups: Vec::new(),
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn names(&self) -> &VarNames {
        &self.names
    }

    pub fn num_unknowns(&self) -> usize {
        self.unknown_names.len()
    }

    pub fn unknown_name(&self, k: usize) -> &str {
        &self.unknown_names[k]
    }

    pub fn decisions(&self) -> &[DecisionPoly] {
        &self.decisions
    }

    pub fn constraints(&self) -> &[SosConstraint] {
        &self.constraints
    }

    pub fn objective(&self) -> Option<&(Sense, Affine)> {
        self.objective.as_ref()
    }

    /// Extra variable groups used for Gram basis reduction and symmetry
    /// detection (for example auxiliary lifting variables).
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn add_var_group(&mut self, vars: Vec<usize>) {
        self.groups.push(vars);
    }

    /// New scalar unknown; returns its index.
    pub fn add_scalar(&mut self, name: &str) -> usize {
        self.unknown_names.push(name.to_string());
        self.unknown_names.len() - 1
    }

    pub fn scalar_expr(&self, k: usize) -> PolyExpr {
        PolyExpr::unknown_times(k, Monomial::one(self.nvars))
    }

    pub fn add_decision(&mut self, name: &str, spec: &DecisionSpec) -> Result<Decision, SosError> {
        let bad = |reason: &str| SosError::BadDecision {
            name: name.to_string(),
            reason: reason.to_string(),
        };
        let vars = spec.vars.clone().unwrap_or_else(|| (0..self.nvars).collect());
        if vars.iter().any(|&v| v >= self.nvars) {
            return Err(bad("variable index out of range"));
        }
        if spec.kind == DecisionKind::Sos && spec.max_degree % 2 == 1 {
            return Err(bad("an SOS polynomial needs an even degree bound"));
        }
        let sub = monomial_basis(vars.len(), spec.max_degree, spec.parity);
        let mut basis: Vec<Monomial> = sub
            .iter()
            .filter(|m| m.degree() >= spec.min_degree)
            .map(|m| {
                let mut e = vec![0u16; self.nvars];
                for (&v, &x) in vars.iter().zip(m.exponents()) {
                    e[v] = x;
                }
                Monomial::from_exponents(&e)
            })
            .collect();
        basis.sort();
        if basis.is_empty() {
            return Err(bad("empty monomial basis"));
        }
        self.add_decision_with_basis(name, basis, spec.kind)
    }

    pub fn add_decision_with_basis(
        &mut self,
        name: &str,
        basis: Vec<Monomial>,
        kind: DecisionKind,
    ) -> Result<Decision, SosError> {
        if basis.iter().any(|m| m.nvars() != self.nvars) {
            return Err(SosError::BadDecision {
                name: name.to_string(),
                reason: "basis monomial has the wrong variable count".into(),
            });
        }
        let first = self.unknown_names.len();
        let mut expr = PolyExpr::zero(self.nvars);
        for (k, m) in basis.iter().enumerate() {
            let label = format!("{name}[{}]", Polynomial::term(m.clone(), 1.0).display_with(&self.names));
            self.unknown_names.push(label);
            expr = expr.add(&PolyExpr::unknown_times(first + k, m.clone()))?;
        }
        let id = self.decisions.len();
        self.decisions.push(DecisionPoly {
            name: name.to_string(),
            basis,
            first_unknown: first,
            kind,
        });
        if kind == DecisionKind::Sos {
            self.add_sos(&format!("{name} is SOS"), expr.clone())?;
        }
        Ok(Decision { id, expr })
    }

    pub fn decision_by_name(&self, name: &str) -> Option<Decision> {
        let id = self.decisions.iter().position(|d| d.name == name)?;
        let d = &self.decisions[id];
        let mut expr = PolyExpr::zero(self.nvars);
        for (k, m) in d.basis.iter().enumerate() {
            expr = expr
                .add(&PolyExpr::unknown_times(d.first_unknown + k, m.clone()))
                .ok()?;
        }
        Some(Decision { id, expr })
    }

    /// Numeric polynomial of a decision for given unknown values.
    pub fn decision_value(&self, id: usize, values: &[f64]) -> Polynomial {
        let d = &self.decisions[id];
        let mut p = Polynomial::zero(self.nvars);
        for (k, m) in d.basis.iter().enumerate() {
            p.add_term(m.clone(), values[d.first_unknown + k]);
        }
        p
    }

    pub fn add_sos(&mut self, label: &str, expr: PolyExpr) -> Result<usize, SosError> {
        self.check_expr(&expr)?;
        let degree = expr.degree();
        if degree % 2 == 1 {
            let fixed = expr
                .terms()
                .filter(|(m, _)| m.degree() == degree)
                .all(|(_, a)| a.is_numeric());
            if fixed {
                return Err(SosError::OddDegree {
                    label: label.to_string(),
                    degree,
                });
            }
        }
        self.constraints.push(SosConstraint {
            label: label.to_string(),
            expr,
            kind: ConstraintKind::Sos,
        });
        Ok(self.constraints.len() - 1)
    }

    pub fn add_zero(&mut self, label: &str, expr: PolyExpr) -> Result<usize, SosError> {
        self.check_expr(&expr)?;
        self.constraints.push(SosConstraint {
            label: label.to_string(),
            expr,
            kind: ConstraintKind::Zero,
        });
        Ok(self.constraints.len() - 1)
    }

    fn check_expr(&self, expr: &PolyExpr) -> Result<(), SosError> {
        if expr.nvars() != self.nvars {
            return Err(PolyError::NvarsMismatch {
                left: self.nvars,
                right: expr.nvars(),
            }
            .into());
        }
        if let Some(&k) = expr.unknowns().last() {
            if k >= self.unknown_names.len() {
                return Err(SosError::BadDecision {
                    name: format!("#{k}"),
                    reason: "unknown not declared in this program".into(),
                });
            }
        }
        Ok(())
    }

    /// Generalized S-procedure: certify `f0 >= 0` wherever every `h_i = 0`
    /// and every `g_j >= 0` by requiring
    /// `f0 + Σ λ_i h_i − Σ σ_j g_j` to be SOS, with free multipliers `λ_i` and
    /// SOS multipliers `σ_j`.
    pub fn s_procedure(
        &mut self,
        label: &str,
        f0: &PolyExpr,
        equalities: &[(&Decision, &PolyExpr)],
        inequalities: &[(&Decision, &PolyExpr)],
    ) -> Result<usize, SosError> {
        let mut total = f0.clone();
        for (lam, h) in equalities {
            total = total.add(&lam.expr.try_mul(h)?)?;
        }
        for (sigma, g) in inequalities {
            if self.decisions[sigma.id].kind != DecisionKind::Sos {
                return Err(SosError::BadDecision {
                    name: self.decisions[sigma.id].name.clone(),
                    reason: "inequality multipliers must be SOS".into(),
                });
            }
            total = total.sub(&sigma.expr.try_mul(g)?)?;
        }
        self.add_sos(label, total)
    }

    pub fn minimize(&mut self, objective: Affine) {
        self.objective = Some((Sense::Minimize, objective));
    }

    pub fn maximize(&mut self, objective: Affine) {
        self.objective = Some((Sense::Maximize, objective));
    }

    /// Possible support of a constraint: every monomial that can carry a
    /// nonzero coefficient for some value of the unknowns.
    pub(crate) fn support(expr: &PolyExpr) -> BTreeSet<Monomial> {
        expr.terms().map(|(m, _)| m.clone()).collect()
    }

    /// Compile, solve and validate in one step.
    pub fn solve(&self, opts: &crate::sdp::SolveOptions) -> Result<Certificate, SosError> {
        let compiled = compile(self)?;
        let sol = crate::sdp::solve(&compiled.sdp, opts);
        extract_certificate(self, &compiled, &sol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::SolveOptions;

    fn poly(s: &str, n: usize) -> PolyExpr {
        PolyExpr::from_poly(&Polynomial::parse(s, n).unwrap())
    }

    fn check(s: &str, n: usize) -> Result<Certificate, SosError> {
        let mut prog = SosProgram::new(n);
        prog.add_sos("p", poly(s, n))?;
        prog.solve(&SolveOptions::default())
    }

    #[test]
    fn perfect_square_is_sos() {
        let cert = check("x1^2 + 2*x1 + 1", 1).unwrap();
        let g = &cert.grams[0];
        assert_eq!(g.blocks.len(), 1);
        let q = &g.blocks[0].q;
        for v in q.iter() {
            assert!((v - 1.0).abs() < 1e-6, "{q}");
        }
        assert!(g.residual < 1e-6);
        assert!(cert.values.is_empty());
    }

    #[test]
    fn negative_square_is_not_sos() {
        assert!(matches!(
            check("-x1^2", 1),
            Err(SosError::Infeasible { .. })
        ));
    }

    #[test]
    fn motzkin_is_not_sos() {
        let r = check("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", 2);
        assert!(matches!(r, Err(SosError::Infeasible { .. })), "{r:?}");
    }

    #[test]
    fn odd_degree_rejected_early() {
        let mut prog = SosProgram::new(1);
        let r = prog.add_sos("p", poly("x1^3 + 1", 1));
        assert!(matches!(r, Err(SosError::OddDegree { degree: 3, .. })));
    }

    #[test]
    fn s_procedure_on_interval() {
        // x^2 <= 1 implies 2 - x^2 >= 0 with multiplier 1.
        let mut prog = SosProgram::new(1);
        let s = prog.add_decision("S", &DecisionSpec::sos(0)).unwrap();
        let g = poly("1 - x1^2", 1);
        prog.s_procedure("c", &poly("2 - x1^2", 1), &[], &[(&s, &g)])
            .unwrap();
        let cert = prog.solve(&SolveOptions::default()).unwrap();
        assert!(cert.values[0] >= -1e-8);
    }

    #[test]
    fn s_procedure_rejects_false_implication() {
        // x^2 <= 1 does not imply x >= 0.
        for d in [0, 2, 4] {
            let mut prog = SosProgram::new(1);
            let s = prog.add_decision("S", &DecisionSpec::sos(d)).unwrap();
            let g = poly("1 - x1^2", 1);
            let f0 = poly("x1", 1);
            let r = prog
                .s_procedure("c", &f0, &[], &[(&s, &g)])
                .and_then(|_| prog.solve(&SolveOptions::default()));
            assert!(r.is_err(), "degree {d}: {r:?}");
        }
    }

    #[test]
    fn minimizes_a_bound() {
        // min C s.t. C - (2x - x^2) SOS, so C = 1.
        let mut prog = SosProgram::new(1);
        let c = prog.add_scalar("C");
        let e = prog.scalar_expr(c).sub(&poly("2*x1 - x1^2", 1)).unwrap();
        prog.add_sos("bound", e).unwrap();
        prog.minimize(Affine::unknown(c));
        let cert = prog.solve(&SolveOptions::default()).unwrap();
        assert!((cert.objective - 1.0).abs() < 1e-6, "{}", cert.objective);
    }

    #[test]
    fn compile_is_deterministic() {
        let mut prog = SosProgram::new(2);
        let v = prog.add_decision("V", &DecisionSpec::free(4).without_constant()).unwrap();
        let e = v.expr.derivative(0).add(&poly("x1^4 + x2^4 + 1", 2)).unwrap();
        prog.add_sos("c", e).unwrap();
        let a = compile(&prog).unwrap();
        let b = compile(&prog).unwrap();
        assert_eq!(a.sdp, b.sdp);
        assert_eq!(
            crate::sdp::export_sdpa(&a.sdp),
            crate::sdp::export_sdpa(&b.sdp)
        );
    }
}
