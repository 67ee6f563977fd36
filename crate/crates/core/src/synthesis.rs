//! Small-feedback controller synthesis under an expensive-control cost
//! `Φ0 + uᵀΨu/ε`.
//!
//! With `u = εu1`, `V = V0 + εV1` and `C = C0 + εC1`, the bound condition
//! expands to `F0 + εF1 + O(ε²) <= 0` where `F0 = f·∇V0 + Φ0 − C0` is fixed
//! by the uncontrolled bound and
//!
//! ```text
//! F1 = W1 + u1ᵀΨu1,   W1 = f·∇V1 + (G u1 + H (∂u1/∂x) f)·∇V0 − C1.
//! ```
//!
//! Minimizing `C1` subject to `F1 <= 0` on `{F0 = 0}` is made affine in the
//! unknowns through the block matrix `E1 = [[−W1, (Ψu1)ᵀ], [Ψu1, Ψ]]`:
//! `zᵀE1z + S1·F0 − S0·(2β − xᵀx)` must be SOS in `(x, z)`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::bound::{ball_poly, bound_autonomous, BoundCertificate, BoundError, BoundSpec, Direction};
use crate::poly::{Monomial, PolyError, PolyMatrix, PolyVector, Polynomial, VarNames};
use crate::sdp::{Residuals, SolveOptions};
use crate::sos::{
    monomial_basis, Affine, DecisionKind, DecisionSpec, GramCertificate, Parity, PolyExpr, SosError,
    SosProgram,
};
use crate::system::{PolySystem, SystemError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error("synthesis problem is infeasible at degrees {0}")]
    Infeasible(Degrees),
    #[error("C1 is unbounded below; check that psi is positive definite")]
    Unbounded,
    #[error("synthesis solver failed: {0}")]
    Solver(String),
    #[error("{0}")]
    Invalid(String),
    #[error("closed loop is singular: det(I - eps J H) is not certified positive")]
    SingularClosedLoop,
}

impl From<PolyError> for SynthesisError {
    fn from(e: PolyError) -> Self {
        SynthesisError::System(e.into())
    }
}

/// Maximum degrees of the controller, the first-order tunable function and
/// the two multipliers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct Degrees {
    pub u1: u32,
    pub v1: u32,
    /// Ball multiplier.
    pub s0: u32,
    /// Multiplier of `F0`.
    pub s1: u32,
}

impl Default for Degrees {
    fn default() -> Self {
        Degrees {
            u1: 1,
            v1: 4,
            s0: 4,
            s1: 2,
        }
    }
}

impl std::fmt::Display for Degrees {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "u1={} V1={} s0={} s1={}", self.u1, self.v1, self.s0, self.s1)
    }
}

/// How the multipliers depend on the lifting variables `z`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MultiplierShape {
    /// `s(x)·zᵀz`.
    #[default]
    Isotropic,
    /// General quadratic form `zᵀΛ(x)z`.
    Full,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthesisOptions {
    pub degrees: Degrees,
    pub shape: MultiplierShape,
    /// Admit a constant term in `u1`. Always on when `degrees.u1 == 0`.
    pub u1_constant: bool,
    pub method: SynthesisMethod,
}

/// How the first-order problem is solved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthesisMethod {
    /// S-procedure on `{F0 = 0}` with the lifted block matrix.
    SProcedure,
    /// Minimize the first-order change `L(u1ᵀΨu1 + (Gu1 + H(∂u1/∂x)f)·∇V0)`
    /// of the bound under the pseudo-moments `L` dual to the bound
    /// certificate. A convex quadratic in the coefficients of `u1`.
    DualSensitivity,
    /// S-procedure, falling back to dual sensitivity when the S-procedure
    /// problem is unbounded or fails. This happens when the bound is not
    /// sharp and `F0` has no real zeros on an invariant set.
    #[default]
    Auto,
}

impl std::fmt::Display for SynthesisMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SynthesisMethod::SProcedure => "s-procedure",
            SynthesisMethod::DualSensitivity => "dual-sensitivity",
            SynthesisMethod::Auto => "auto",
        })
    }
}

/// Symbolic first-order unknowns, all in the same variable count.
#[derive(Clone, Debug, PartialEq)]
pub struct Templates {
    pub v1: PolyExpr,
    pub u1: Vec<PolyExpr>,
    pub c1: PolyExpr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionPieces {
    pub f0: Polynomial,
    pub w1: PolyExpr,
    pub u1: Vec<PolyExpr>,
    pub psi: PolyMatrix,
}

/// Expand the bound condition to first order in ε around `(V0, C0)`.
pub fn build_expansion(
    sys: &PolySystem,
    v0: &Polynomial,
    c0: f64,
    t: &Templates,
) -> Result<ExpansionPieces, SynthesisError> {
    let n = sys.n();
    let m = sys.m();
    let nv = t.v1.nvars();
    if nv < n || t.u1.len() != m || t.u1.iter().any(|u| u.nvars() != nv) || t.c1.nvars() != nv {
        return Err(SynthesisError::Invalid("templates do not match the system".into()));
    }
    let ext = |p: &Polynomial| p.extend_vars(nv);
    let grad0 = v0.gradient();
    let f0 = &(&grad0.dot(&sys.f)? + &sys.phi0) - &Polynomial::constant(n, c0);
    let f: Vec<Polynomial> = sys.f.iter().map(ext).collect();
    let grad0: Vec<Polynomial> = grad0.iter().map(ext).collect();

    let mut w1 = PolyExpr::zero(nv);
    for (i, fi) in f.iter().enumerate() {
        w1 = w1.add(&t.v1.derivative(i).mul_poly(fi)?)?;
    }
    for (j, u) in t.u1.iter().enumerate() {
        // Σ_i G_ij ∂V0/∂x_i
        let mut g_dir = Polynomial::zero(nv);
        let mut h_dir = Polynomial::zero(nv);
        for (i, gi) in grad0.iter().enumerate() {
            g_dir = &g_dir + &(&ext(sys.g.get(i, j)) * gi);
            h_dir = &h_dir + &(&ext(sys.h.get(i, j)) * gi);
        }
        w1 = w1.add(&u.mul_poly(&g_dir)?)?;
        if !h_dir.is_zero() {
            let mut rate = PolyExpr::zero(nv);
            for (k, fk) in f.iter().enumerate() {
                rate = rate.add(&u.derivative(k).mul_poly(fk)?)?;
            }
            w1 = w1.add(&rate.mul_poly(&h_dir)?)?;
        }
    }
    w1 = w1.sub(&t.c1)?;
    Ok(ExpansionPieces {
        f0: ext(&f0),
        w1,
        u1: t.u1.clone(),
        psi: sys.psi.map(ext),
    })
}

impl ExpansionPieces {
    fn nvars(&self) -> usize {
        self.w1.nvars()
    }

    /// `Ψ u1` as symbolic expressions.
    fn psi_u(&self) -> Result<Vec<PolyExpr>, SynthesisError> {
        let m = self.u1.len();
        let mut out = Vec::with_capacity(m);
        for j in 0..m {
            let mut e = PolyExpr::zero(self.nvars());
            for k in 0..m {
                e = e.add(&self.u1[k].mul_poly(self.psi.get(j, k))?)?;
            }
            out.push(e);
        }
        Ok(out)
    }

    /// `zᵀE1z` where the lifting variables start at index `zbase`.
    pub fn lifted_form(&self, zbase: usize) -> Result<PolyExpr, SynthesisError> {
        let nv = self.nvars();
        let m = self.u1.len();
        if zbase + m + 1 > nv {
            return Err(SynthesisError::Invalid("not enough lifting variables".into()));
        }
        let z = |a: usize| Polynomial::var(nv, zbase + a);
        let mut e = self.w1.scale(-1.0).mul_poly(&z(0).pow(2))?;
        for (j, pu) in self.psi_u()?.iter().enumerate() {
            e = e.add(&pu.mul_poly(&(&z(0) * &z(j + 1)).scale(2.0))?)?;
        }
        for j in 0..m {
            for k in 0..m {
                let term = &(self.psi.get(j, k) * &z(j + 1)) * &z(k + 1);
                e = e.add(&PolyExpr::from_poly(&term))?;
            }
        }
        Ok(e)
    }

    /// Numeric `F1 = W1 + u1ᵀΨu1` at given unknown values.
    pub fn f1(&self, values: &[f64]) -> Result<Polynomial, SynthesisError> {
        let u: Vec<Polynomial> = self.u1.iter().map(|e| e.evaluate(values)).collect();
        let u = PolyVector::from_vec(self.nvars(), u)?;
        Ok(&self.w1.evaluate(values) + &u.dot(&self.psi.mul_vec(&u)?)?)
    }

    /// `E1` at unknown values and a point (padded with zeros for `z`).
    pub fn e1_at(&self, values: &[f64], point: &[f64]) -> Result<DMatrix<f64>, SynthesisError> {
        let m = self.u1.len();
        let mut x = point.to_vec();
        x.resize(self.nvars(), 0.0);
        let w = self.w1.evaluate(values).evaluate(&x)?;
        let pu: Vec<f64> = self
            .psi_u()?
            .iter()
            .map(|e| e.evaluate(values).evaluate(&x))
            .collect::<Result<_, _>>()?;
        let psi = self.psi.evaluate(&x)?;
        let mut e = DMatrix::zeros(m + 1, m + 1);
        e[(0, 0)] = -w;
        for j in 0..m {
            e[(0, j + 1)] = pu[j];
            e[(j + 1, 0)] = pu[j];
            for k in 0..m {
                e[(j + 1, k + 1)] = psi[j * m + k];
            }
        }
        Ok(e)
    }
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone()).eigenvalues.min()
}

pub const LIFTED_LABEL: &str = "lifted";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisResult {
    pub c0: f64,
    pub c1: f64,
    /// Controller in the state variables.
    pub u1: PolyVector,
    pub v1: Polynomial,
    /// Multipliers as polynomials in `(x, z)`: `S1` on `F0`, `S0` on the ball.
    pub multipliers: BTreeMap<String, Polynomial>,
    pub degrees: Degrees,
    pub shape: MultiplierShape,
    pub ball: Option<f64>,
    pub method: SynthesisMethod,
    /// `true` when the solver optimum had `C1 > 0` and the zero controller
    /// was returned instead.
    pub fallback: bool,
    /// Gram certificates; the first is the lifted constraint.
    pub grams: Vec<GramCertificate>,
    pub residuals: Residuals,
    pub iterations: usize,
}

/// Largest `C1` accepted from the solver before falling back to `u1 = 0`.
pub const C1_TOL: f64 = 1e-9;

fn lifted_names(n: usize, m: usize) -> VarNames {
    VarNames::with_aux(n, m + 1)
}

fn z_monomials(n: usize, m: usize) -> Vec<Polynomial> {
    let nv = n + m + 1;
    let mut out = Vec::new();
    for a in 0..=m {
        for b in a..=m {
            out.push(&Polynomial::var(nv, n + a) * &Polynomial::var(nv, n + b));
        }
    }
    out
}

fn zz(n: usize, m: usize) -> Polynomial {
    let nv = n + m + 1;
    (0..=m).fold(Polynomial::zero(nv), |acc, a| &acc + &Polynomial::var(nv, n + a).pow(2))
}

/// Basis `z_a z_b x^α` with `|α| <= deg`.
fn quadratic_in_z_basis(n: usize, m: usize, deg: u32) -> Vec<Monomial> {
    let nv = n + m + 1;
    let mut out = Vec::new();
    for zm in z_monomials(n, m) {
        let (zmono, _) = zm.terms().next().unwrap();
        for xm in monomial_basis(n, deg, Parity::All) {
            out.push(zmono.mul(&xm.extend(nv)));
        }
    }
    out.sort();
    out
}

/// First-order controller synthesis, restricted to the certificate's ball
/// when it has one.
pub fn synthesize(
    sys: &PolySystem,
    cert: &BoundCertificate,
    opts: &SynthesisOptions,
    solver: &SolveOptions,
) -> Result<SynthesisResult, SynthesisError> {
    if cert.direction != Direction::Upper {
        return Err(SynthesisError::Invalid("synthesis needs an upper-bound certificate".into()));
    }
    if sys.m() == 0 {
        return Err(SynthesisError::Invalid("system has no control inputs".into()));
    }
    match opts.method {
        SynthesisMethod::SProcedure => s_procedure(sys, cert, opts, solver),
        SynthesisMethod::DualSensitivity => dual_sensitivity(sys, cert, opts),
        SynthesisMethod::Auto => match s_procedure(sys, cert, opts, solver) {
            Err(SynthesisError::Unbounded | SynthesisError::Solver(_) | SynthesisError::Infeasible(_)) => {
                dual_sensitivity(sys, cert, opts)
            }
            other => other,
        },
    }
}

fn u1_basis(n: usize, opts: &SynthesisOptions) -> Vec<Monomial> {
    let d = opts.degrees.u1;
    monomial_basis(n, d, Parity::All)
        .into_iter()
        .filter(|m| d == 0 || opts.u1_constant || !m.is_one())
        .collect()
}

fn dual_sensitivity(
    sys: &PolySystem,
    cert: &BoundCertificate,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult, SynthesisError> {
    let n = sys.n();
    let m = sys.m();
    let basis = u1_basis(n, opts);
    let nb = basis.len();
    let grad0 = cert.v.gradient();
    let mono = |mm: &Monomial| Polynomial::term(mm.clone(), 1.0);

    // Directions along which u1_j enters the first-order change.
    let mut g_dir = Vec::with_capacity(m);
    let mut h_dir = Vec::with_capacity(m);
    for j in 0..m {
        let mut g = Polynomial::zero(n);
        let mut h = Polynomial::zero(n);
        for i in 0..n {
            g = &g + &(sys.g.get(i, j) * &grad0[i]);
            h = &h + &(sys.h.get(i, j) * &grad0[i]);
        }
        g_dir.push(g);
        h_dir.push(h);
    }

    let dim = m * nb;
    let mut quad = DMatrix::zeros(dim, dim);
    let mut lin = nalgebra::DVector::zeros(dim);
    let mut needed = 0;
    for j in 0..m {
        for (a, ma) in basis.iter().enumerate() {
            let pa = mono(ma);
            let mut l = &pa * &g_dir[j];
            if !h_dir[j].is_zero() {
                let rate = pa.gradient().dot(&sys.f)?;
                l = &l + &(&rate * &h_dir[j]);
            }
            needed = needed.max(l.degree());
            lin[j * nb + a] = cert.moment_of(&l);
            for k in 0..m {
                for (b, mb) in basis.iter().enumerate() {
                    let q = &(&pa * &mono(mb)) * sys.psi.get(j, k);
                    needed = needed.max(q.degree());
                    quad[(j * nb + a, k * nb + b)] = cert.moment_of(&q);
                }
            }
        }
    }
    if needed > cert.moment_degree() {
        return Err(SynthesisError::Invalid(format!(
            "controller degree {} needs moments of degree {needed}, the bound provides {}",
            opts.degrees.u1,
            cert.moment_degree()
        )));
    }
    // min kᵀQk + lᵀk  →  Qk = −l/2 on the range of Q.
    let quad = (&quad + quad.transpose()) * 0.5;
    let eig = SymmetricEigen::new(quad.clone());
    let top = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let mut k = nalgebra::DVector::zeros(dim);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > 1e-10 * top {
            let v = eig.eigenvectors.column(i);
            k -= v * (v.dot(&lin) / (2.0 * lam));
        }
    }
    let c1 = k.dot(&(&quad * &k)) + lin.dot(&k);
    let mut u1 = Vec::with_capacity(m);
    for j in 0..m {
        let mut p = Polynomial::zero(n);
        for (a, ma) in basis.iter().enumerate() {
            p.add_term(ma.clone(), k[j * nb + a]);
        }
        u1.push(p);
    }
    Ok(SynthesisResult {
        c0: cert.c,
        c1: c1.min(0.0),
        u1: PolyVector::from_vec(n, u1)?,
        v1: Polynomial::zero(n),
        multipliers: BTreeMap::new(),
        degrees: opts.degrees,
        shape: opts.shape,
        ball: cert.ball.map(|b| b.beta),
        method: SynthesisMethod::DualSensitivity,
        fallback: false,
        grams: Vec::new(),
        residuals: cert.residuals,
        iterations: 0,
    })
}

fn s_procedure(
    sys: &PolySystem,
    cert: &BoundCertificate,
    opts: &SynthesisOptions,
    solver: &SolveOptions,
) -> Result<SynthesisResult, SynthesisError> {
    let n = sys.n();
    let m = sys.m();
    let d = opts.degrees;
    if d.v1 == 0 {
        return Err(SynthesisError::Invalid("V1 degree must be positive".into()));
    }
    let nv = n + m + 1;
    let xs: Vec<usize> = (0..n).collect();
    let mut prog = SosProgram::with_names(lifted_names(n, m));
    prog.add_var_group((n..nv).collect());

    let v1 = prog.add_decision("V1", &DecisionSpec::free(d.v1).without_constant().in_vars(xs.clone()))?;
    let u_basis: Vec<Monomial> = u1_basis(n, opts).iter().map(|mm| mm.extend(nv)).collect();
    let mut u1 = Vec::with_capacity(m);
    for j in 0..m {
        let name = if m == 1 { "u1".to_string() } else { format!("u1_{}", j + 1) };
        u1.push(prog.add_decision_with_basis(&name, u_basis.clone(), DecisionKind::Free)?);
    }
    let c1 = prog.add_scalar("C1");
    let templates = Templates {
        v1: v1.expr.clone(),
        u1: u1.iter().map(|d| d.expr.clone()).collect(),
        c1: prog.scalar_expr(c1),
    };
    let pieces = build_expansion(sys, &cert.v, cert.c, &templates)?;
    let mut expr = pieces.lifted_form(n)?;

    let s1 = match opts.shape {
        MultiplierShape::Isotropic => {
            let s = prog.add_decision("s1", &DecisionSpec::free(d.s1).in_vars(xs.clone()))?;
            s.expr.mul_poly(&zz(n, m))?
        }
        MultiplierShape::Full => {
            prog.add_decision_with_basis("S1", quadratic_in_z_basis(n, m, d.s1), DecisionKind::Free)?
                .expr
        }
    };
    expr = expr.add(&s1.mul_poly(&pieces.f0)?)?;

    let beta = cert.ball.map(|b| b.beta);
    let mut s0 = None;
    if let Some(beta) = beta {
        let s = match opts.shape {
            MultiplierShape::Isotropic => {
                let s = prog.add_decision("s0", &DecisionSpec::sos(d.s0).in_vars(xs.clone()))?;
                s.expr.mul_poly(&zz(n, m))?
            }
            MultiplierShape::Full => {
                prog.add_decision_with_basis("S0", quadratic_in_z_basis(n, m, d.s0), DecisionKind::Sos)?
                    .expr
            }
        };
        expr = expr.sub(&s.mul_poly(&ball_poly(nv, beta))?)?;
        s0 = Some(s);
    }
    prog.add_sos(LIFTED_LABEL, expr)?;
    prog.minimize(Affine::unknown(c1));

    let cert1 = match prog.solve(solver) {
        Ok(c) => c,
        Err(SosError::Infeasible { .. }) => return Err(SynthesisError::Infeasible(d)),
        Err(SosError::Unbounded { .. }) => return Err(SynthesisError::Unbounded),
        Err(e @ (SosError::SolverFailed { .. } | SosError::CertificateInvalid { .. })) => {
            return Err(SynthesisError::Solver(e.to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    let vals = &cert1.values;
    let proj = projection(n, nv);
    let mut result = SynthesisResult {
        c0: cert.c,
        c1: vals[c1],
        u1: PolyVector::from_vec(
            n,
            u1.iter()
                .map(|u| prog.decision_value(u.id, vals).compose(&proj))
                .collect::<Result<_, _>>()?,
        )?,
        v1: prog.decision_value(v1.id, vals).compose(&proj)?,
        multipliers: BTreeMap::new(),
        degrees: d,
        shape: opts.shape,
        ball: beta,
        method: SynthesisMethod::SProcedure,
        fallback: false,
        grams: Vec::new(),
        residuals: cert1.sdp_residuals,
        iterations: cert1.iterations,
    };
    result.multipliers.insert("S1".into(), s1.evaluate(vals));
    if let Some(s) = &s0 {
        result.multipliers.insert("S0".into(), s.evaluate(vals));
    }
    let mut grams = cert1.grams;
    if let Some(pos) = grams.iter().position(|g| g.label == LIFTED_LABEL) {
        let main = grams.remove(pos);
        grams.insert(0, main);
    }
    result.grams = grams;

    if result.c1 > C1_TOL {
        result = zero_controller(sys, cert, result, solver)?;
    }
    Ok(result)
}

/// `[x1, .., xn, 0, ..]` in `n` variables, for dropping lifting variables.
fn projection(n: usize, nv: usize) -> Vec<Polynomial> {
    (0..nv)
        .map(|i| if i < n { Polynomial::var(n, i) } else { Polynomial::zero(n) })
        .collect()
}

fn zero_controller(
    sys: &PolySystem,
    cert: &BoundCertificate,
    mut r: SynthesisResult,
    solver: &SolveOptions,
) -> Result<SynthesisResult, SynthesisError> {
    let n = sys.n();
    let m = sys.m();
    let nv = n + m + 1;
    r.c1 = 0.0;
    r.u1 = PolyVector::zeros(n, m);
    r.v1 = Polynomial::zero(n);
    for s in r.multipliers.values_mut() {
        *s = Polynomial::zero(nv);
    }
    r.fallback = true;
    let p = lifted_polynomial(sys, cert, &r)?;
    let mut check = SosProgram::with_names(lifted_names(n, m));
    check.add_var_group((n..nv).collect());
    check.add_sos(LIFTED_LABEL, PolyExpr::from_poly(&p))?;
    let c = check.solve(solver)?;
    r.grams = c.grams;
    r.residuals = c.sdp_residuals;
    Ok(r)
}

/// Numeric lifted polynomial `zᵀE1z + S1·F0 − S0·(2β − xᵀx)` of a result.
pub fn lifted_polynomial(
    sys: &PolySystem,
    cert: &BoundCertificate,
    r: &SynthesisResult,
) -> Result<Polynomial, SynthesisError> {
    let n = sys.n();
    let m = sys.m();
    let nv = n + m + 1;
    let t = Templates {
        v1: PolyExpr::from_poly(&r.v1.extend_vars(nv)),
        u1: r.u1.iter().map(|u| PolyExpr::from_poly(&u.extend_vars(nv))).collect(),
        c1: PolyExpr::constant(nv, r.c1),
    };
    let pieces = build_expansion(sys, &cert.v, cert.c, &t)?;
    let mut p = pieces.lifted_form(n)?.evaluate(&[]);
    if let Some(s1) = r.multipliers.get("S1") {
        p = &p + &(s1 * &pieces.f0);
    }
    if let (Some(s0), Some(beta)) = (r.multipliers.get("S0"), r.ball) {
        p = &p - &(s0 * &ball_poly(nv, beta));
    }
    Ok(p)
}

impl SynthesisResult {
    /// Re-validate the Gram certificates against the numeric polynomials.
    pub fn replay(&self, sys: &PolySystem, cert: &BoundCertificate) -> Result<f64, SynthesisError> {
        if self.method == SynthesisMethod::DualSensitivity {
            return Err(SynthesisError::Invalid(
                "dual-sensitivity results carry no SOS certificate".into(),
            ));
        }
        let p = lifted_polynomial(sys, cert, self)?;
        let main = self
            .grams
            .first()
            .ok_or_else(|| SynthesisError::Invalid("result carries no certificate".into()))?;
        main.validate(&p)?;
        let mut worst = main.reconstruct(p.nvars()).max_coeff_diff(&p);
        if !self.fallback {
            if let (Some(g), Some(s0)) = (self.grams.get(1), self.multipliers.get("S0")) {
                // Isotropic: the SOS constraint is on s0(x) alone.
                let target = match self.shape {
                    MultiplierShape::Isotropic => s0_factor(s0, sys.n(), sys.m())?,
                    MultiplierShape::Full => s0.clone(),
                };
                g.validate(&target)?;
                worst = worst.max(g.reconstruct(target.nvars()).max_coeff_diff(&target));
            }
        }
        Ok(worst)
    }
}

/// Recover `s(x)` from `s(x)·zᵀz` by setting `z = e_0`.
fn s0_factor(p: &Polynomial, n: usize, m: usize) -> Result<Polynomial, SynthesisError> {
    let nv = n + m + 1;
    let subs: Vec<Polynomial> = (0..nv)
        .map(|i| {
            if i < n {
                Polynomial::var(nv, i)
            } else if i == n {
                Polynomial::constant(nv, 1.0)
            } else {
                Polynomial::zero(nv)
            }
        })
        .collect();
    Ok(p.compose(&subs)?)
}

/// Global synthesis; any ball on `cert` is ignored.
pub fn solve_o1(
    sys: &PolySystem,
    cert: &BoundCertificate,
    degrees: Degrees,
    solver: &SolveOptions,
) -> Result<SynthesisResult, SynthesisError> {
    let mut global = cert.clone();
    global.ball = None;
    let opts = SynthesisOptions {
        degrees,
        method: SynthesisMethod::SProcedure,
        ..Default::default()
    };
    synthesize(sys, &global, &opts, solver)
}

/// Ball-restricted synthesis; `cert` must come from the same ball.
pub fn solve_o1_ball(
    sys: &PolySystem,
    cert: &BoundCertificate,
    degrees: Degrees,
    beta: f64,
    solver: &SolveOptions,
) -> Result<SynthesisResult, SynthesisError> {
    match cert.ball {
        Some(b) if b.beta == beta => {}
        _ => {
            return Err(SynthesisError::Invalid(format!(
                "bound certificate was not computed on the ball with beta = {beta}"
            )))
        }
    }
    let opts = SynthesisOptions {
        degrees,
        method: SynthesisMethod::SProcedure,
        ..Default::default()
    };
    synthesize(sys, cert, &opts, solver)
}

/// Closed loop `ẋ = N(x)/det K(x)` for `u = εu1`, where
/// `K = I − εJH` (m×m, `J` the Jacobian of `u1`) and
/// `N = det(K)(f + εGu1) + εH adj(K) J (f + εGu1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoop {
    pub numerator: PolyVector,
    pub denominator: Polynomial,
    /// `Φ0 + ε u1ᵀΨu1`.
    pub cost: Polynomial,
}

pub fn closed_loop(sys: &PolySystem, u1: &PolyVector, eps: f64) -> Result<ClosedLoop, SynthesisError> {
    let n = sys.n();
    let m = sys.m();
    let eu = u1.scale(eps);
    let b = sys.substitute_controls(&eu)?;
    let cost = &sys.phi0 + &u1.dot(&sys.psi.mul_vec(u1)?)?.scale(eps);
    if !sys.has_h() || eps == 0.0 {
        return Ok(ClosedLoop {
            numerator: b,
            denominator: Polynomial::constant(n, 1.0),
            cost,
        });
    }
    let jac = u1.jacobian();
    let jh = jac.mul_mat(&sys.h)?;
    let k = PolyMatrix::from_rows(
        n,
        (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        let delta = Polynomial::constant(n, if i == j { 1.0 } else { 0.0 });
                        &delta - &jh.get(i, j).scale(eps)
                    })
                    .collect()
            })
            .collect(),
    )?;
    let (det, adj) = det_adj(&k)?;
    let jb = jac.mul_vec(&b)?;
    let hadj_jb = sys.h.mul_vec(&adj.mul_vec(&jb)?)?.scale(eps);
    let numerator = b
        .iter()
        .zip(hadj_jb.iter())
        .map(|(bi, ci)| &(&det * bi) + ci)
        .collect::<Vec<_>>();
    Ok(ClosedLoop {
        numerator: PolyVector::from_vec(n, numerator)?,
        denominator: det,
        cost,
    })
}

/// Determinant and adjugate by cofactor expansion (small m).
fn det_adj(a: &PolyMatrix) -> Result<(Polynomial, PolyMatrix), SynthesisError> {
    let m = a.rows();
    let nv = a.nvars();
    if m == 1 {
        return Ok((a.get(0, 0).clone(), PolyMatrix::identity(nv, 1)));
    }
    let minor = |r: usize, c: usize| -> PolyMatrix {
        let rows = (0..m)
            .filter(|&i| i != r)
            .map(|i| (0..m).filter(|&j| j != c).map(|j| a.get(i, j).clone()).collect())
            .collect();
        PolyMatrix::from_rows(nv, rows).expect("minor is square")
    };
    let det_of = |b: &PolyMatrix| -> Result<Polynomial, SynthesisError> { Ok(det_adj(b)?.0) };
    let mut adj = PolyMatrix::zeros(nv, m, m);
    let mut det = Polynomial::zero(nv);
    for i in 0..m {
        for j in 0..m {
            let mut cof = det_of(&minor(i, j))?;
            if (i + j) % 2 == 1 {
                cof = -&cof;
            }
            if i == 0 {
                det = &det + &(a.get(0, j) * &cof);
            }
            adj.set(j, i, cof);
        }
    }
    Ok((det, adj))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinedBound {
    pub eps: f64,
    pub c: f64,
    pub certificate: BoundCertificate,
    pub closed_loop: ClosedLoop,
}

/// Upper bound on the average of `Φ0 + ε u1ᵀΨu1` for the closed loop with
/// the concrete controller `u = εu1`.
pub fn refine_bound(
    sys: &PolySystem,
    u1: &PolyVector,
    eps: f64,
    spec: BoundSpec,
    solver: &SolveOptions,
) -> Result<RefinedBound, SynthesisError> {
    let cl = closed_loop(sys, u1, eps)?;
    if !cl.denominator.is_constant() {
        certify_positive(&cl.denominator, spec, solver)?;
    } else if cl.denominator.constant_term() <= 0.0 {
        return Err(SynthesisError::SingularClosedLoop);
    }
    let certificate = if cl.denominator.is_constant() && cl.denominator.constant_term() == 1.0 {
        bound_autonomous(&cl.numerator, &cl.cost, spec, solver)?
    } else {
        crate::bound::bound_weighted(&cl.numerator, &cl.denominator, &cl.cost, spec, solver)?
    };
    Ok(RefinedBound {
        eps,
        c: certificate.c,
        certificate,
        closed_loop: cl,
    })
}

/// `det K − δ` SOS, on the ball when the spec has one.
fn certify_positive(det: &Polynomial, spec: BoundSpec, solver: &SolveOptions) -> Result<(), SynthesisError> {
    let n = det.nvars();
    let mut prog = SosProgram::new(n);
    let mut expr = PolyExpr::from_poly(&(det - &Polynomial::constant(n, 1e-6)));
    if let Some(b) = spec.ball {
        let d = det.degree().max(2);
        let s = prog.add_decision("s", &DecisionSpec::sos(d - d % 2))?;
        expr = expr.sub(&s.expr.mul_poly(&ball_poly(n, b.beta))?)?;
    }
    prog.add_sos("positivity", expr)?;
    prog.solve(solver).map(|_| ()).map_err(|_| SynthesisError::SingularClosedLoop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bound::{upper_bound, upper_bound_ball};

    fn b1() -> PolySystem {
        PolySystem::parse("vars 1 1\nf: x1 - x1^3\nG: 1\nphi0: x1^2\n").unwrap()
    }

    fn p(s: &str, n: usize) -> Polynomial {
        Polynomial::parse(s, n).unwrap()
    }

    fn opts() -> SolveOptions {
        SolveOptions::default()
    }

    fn b1_degrees(u1: u32) -> Degrees {
        Degrees {
            u1,
            v1: 4,
            s0: 2,
            s1: 2,
        }
    }

    #[test]
    fn b1_expansion() {
        let sys = b1();
        let v0 = p("0.5*x1^2", 1);
        let t = Templates {
            v1: PolyExpr::zero(1),
            u1: vec![PolyExpr::zero(1)],
            c1: PolyExpr::zero(1),
        };
        let e = build_expansion(&sys, &v0, 1.0, &t).unwrap();
        assert_eq!(e.f0, -&p("(x1^2 - 1)^2", 1));
        assert!(e.w1.is_zero());

        // u1 = k x: W1 = k x² − C1 for V1 = 0.
        let t = Templates {
            v1: PolyExpr::zero(1),
            u1: vec![PolyExpr::unknown_times(0, Monomial::var(1, 0))],
            c1: PolyExpr::unknown_times(1, Monomial::one(1)),
        };
        let e = build_expansion(&sys, &v0, 1.0, &t).unwrap();
        let w = e.w1.evaluate(&[-0.5, -0.25]);
        assert_eq!(w, p("-0.5*x1^2 + 0.25", 1));
        assert_eq!(e.f1(&[-0.5, -0.25]).unwrap(), p("-0.25*x1^2 + 0.25", 1));
    }

    #[test]
    fn rate_term_vanishes_without_h() {
        let sys = b1();
        let with_h = sys.clone().with_h(PolyMatrix::from_rows(1, vec![vec![p("0.5", 1)]]).unwrap()).unwrap();
        let v0 = p("0.5*x1^2", 1);
        let t = Templates {
            v1: PolyExpr::zero(1),
            u1: vec![PolyExpr::unknown_times(0, Monomial::var(1, 0))],
            c1: PolyExpr::zero(1),
        };
        let a = build_expansion(&sys, &v0, 1.0, &t).unwrap();
        let b = build_expansion(&with_h, &v0, 1.0, &t).unwrap();
        assert_ne!(a.w1, b.w1);
        // H (du1/dx) f ∇V0 = 0.5 k (x − x³) x
        let diff = b.w1.sub(&a.w1).unwrap().evaluate(&[1.0]);
        assert_eq!(diff, p("0.5*x1^2 - 0.5*x1^4", 1));
    }

    #[test]
    fn b1_synthesis() {
        let sys = b1();
        let cert = upper_bound(&sys, 2, &opts()).unwrap();
        let r = solve_o1(&sys, &cert, b1_degrees(1), &opts()).unwrap();
        assert!((r.c1 + 0.25).abs() < 5e-3, "{}", r.c1);
        let k = r.u1[0].coeff(&Monomial::var(1, 0));
        assert!((k + 0.5).abs() < 0.02, "{k}");
        assert!(!r.fallback);
        assert!(r.replay(&sys, &cert).unwrap() <= 1e-6);
    }

    #[test]
    fn b1_constant_control_gains_nothing() {
        let sys = b1();
        let cert = upper_bound(&sys, 2, &opts()).unwrap();
        let r = solve_o1(&sys, &cert, b1_degrees(0), &opts()).unwrap();
        assert!(r.c1.abs() < 1e-6, "{}", r.c1);
        assert!(r.c1 <= C1_TOL);
        r.replay(&sys, &cert).unwrap();
    }

    #[test]
    fn b1_ball_matches_global() {
        let sys = b1();
        let cert = upper_bound_ball(&sys, 2, 2, 50.0, &opts()).unwrap();
        let r = solve_o1_ball(&sys, &cert, b1_degrees(1), 50.0, &opts()).unwrap();
        assert!((r.c1 + 0.25).abs() < 1e-3, "{}", r.c1);
        r.replay(&sys, &cert).unwrap();
        assert!(solve_o1_ball(&sys, &cert, b1_degrees(1), 10.0, &opts()).is_err());
    }

    #[test]
    fn full_multipliers_are_no_worse() {
        let sys = b1();
        let cert = upper_bound(&sys, 2, &opts()).unwrap();
        let o = SynthesisOptions {
            degrees: b1_degrees(1),
            shape: MultiplierShape::Full,
            ..Default::default()
        };
        let r = synthesize(&sys, &cert, &o, &opts()).unwrap();
        assert!(r.c1 <= -0.25 + 5e-3, "{}", r.c1);
        r.replay(&sys, &cert).unwrap();
    }

    #[test]
    fn dual_sensitivity_agrees_when_sharp() {
        let sys = b1();
        let cert = upper_bound(&sys, 2, &opts()).unwrap();
        let o = SynthesisOptions {
            degrees: b1_degrees(1),
            method: SynthesisMethod::DualSensitivity,
            ..Default::default()
        };
        let r = synthesize(&sys, &cert, &o, &opts()).unwrap();
        assert!((r.c1 + 0.25).abs() < 1e-4, "{}", r.c1);
        assert!((r.u1[0].coeff(&Monomial::var(1, 0)) + 0.5).abs() < 1e-4);
        assert!(r.replay(&sys, &cert).is_err());

        let o = SynthesisOptions {
            degrees: b1_degrees(0),
            ..o
        };
        let r = synthesize(&sys, &cert, &o, &opts()).unwrap();
        assert!(r.c1.abs() < 1e-6, "{}", r.c1);
    }

    #[test]
    fn closed_loop_scalar_elimination() {
        // ẋ = (f + ε k x g) / (1 − ε h k)
        let sys = PolySystem::parse("vars 1 1\nf: -x1\nG: 2\nH: 0.5\nphi0: x1^2\n").unwrap();
        let u1 = PolyVector::from_vec(1, vec![p("3*x1", 1)]).unwrap();
        let cl = closed_loop(&sys, &u1, 0.1).unwrap();
        let x = 0.7;
        let got = cl.numerator[0].eval(&[x]) / cl.denominator.eval(&[x]);
        let want = (-x + 0.1 * 3.0 * x * 2.0) / (1.0 - 0.1 * 0.5 * 3.0);
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn closed_loop_two_inputs() {
        // Compare N/det with a direct linear solve of (I − εHJ)ẋ = f + εGu1.
        let n = 2;
        let sys = PolySystem::parse(
            "vars 2 2\nf:\n  x2\n  -x1 - x2^3\nG:\n  1, 0\n  0, 1\nH:\n  0.3, x1\n  0.1, 0.2*x2\nphi0: x1^2\n",
        )
        .unwrap();
        let u1 = PolyVector::from_vec(n, vec![p("x1 - 0.5*x2^2", n), p("0.2*x1*x2 + x2", n)]).unwrap();
        let eps = 0.2;
        let cl = closed_loop(&sys, &u1, eps).unwrap();
        let x = [0.4, -0.9];
        let jac = u1.jacobian().evaluate(&x).unwrap();
        let h = sys.h.evaluate(&x).unwrap();
        let jm = DMatrix::from_row_slice(2, 2, &jac);
        let hm = DMatrix::from_row_slice(2, 2, &h);
        let a = DMatrix::identity(2, 2) - (&hm * &jm) * eps;
        let rhs = sys.substitute_controls(&u1.scale(eps)).unwrap().evaluate(&x).unwrap();
        let want = a.lu().solve(&nalgebra::DVector::from_vec(rhs)).unwrap();
        let den = cl.denominator.eval(&x);
        for i in 0..2 {
            let got = cl.numerator[i].eval(&x) / den;
            assert!((got - want[i]).abs() < 1e-12, "{got} {}", want[i]);
        }
    }

    #[test]
    fn refined_bound_b1() {
        let sys = b1();
        let u1 = PolyVector::from_vec(1, vec![p("-0.5*x1", 1)]).unwrap();
        let r = refine_bound(&sys, &u1, 0.1, BoundSpec::upper(4), &opts()).unwrap();
        let avg = (1.0 - 0.05) * (1.0 + 0.025);
        assert!(r.c <= 1.0 - 0.1 / 8.0 + 1e-6, "{}", r.c);
        assert!(r.c >= avg - 1e-3, "{}", r.c);
        let r0 = refine_bound(&sys, &u1, 0.0, BoundSpec::upper(4), &opts()).unwrap();
        assert!((r0.c - 1.0).abs() < 1e-3);
    }
}
