//! Certified bounds on long-time averages of `Φ0` along trajectories of
//! `ẋ = f(x)`, and a ball-boundedness certificate for the attractor.
//!
//! An upper bound `C` holds when some polynomial `V` satisfies
//! `f·∇V + Φ0 − C <= 0` everywhere (or on a ball, via an SOS multiplier).
//! Reversing the inequality gives a lower bound.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::poly::{Monomial, PolyVector, Polynomial};
use crate::sdp::{Residuals, SolveOptions};
use crate::sos::{
    Affine, Certificate, Decision, DecisionSpec, GramCertificate, PolyExpr, SosError, SosProgram,
};
use crate::system::{PolySystem, SystemError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error("no certificate with V of degree {dv}{hint}")]
    NoCertificate { dv: u32, hint: String },
    #[error("bound is unbounded at V degree {dv}")]
    Unbounded { dv: u32 },
    #[error("invalid degree: {0}")]
    Degree(String),
    #[error("no boundedness certificate for beta <= {beta_max}")]
    NotBounded { beta_max: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Upper,
    Lower,
}

/// Restriction of the bound to the ball `xᵀx <= 2β` with an SOS multiplier
/// of degree `ds`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ball {
    pub beta: f64,
    pub ds: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundSpec {
    pub direction: Direction,
    pub dv: u32,
    pub ball: Option<Ball>,
}

impl BoundSpec {
    pub fn upper(dv: u32) -> Self {
        BoundSpec {
            direction: Direction::Upper,
            dv,
            ball: None,
        }
    }

    pub fn lower(dv: u32) -> Self {
        BoundSpec {
            direction: Direction::Lower,
            ..Self::upper(dv)
        }
    }

    pub fn in_ball(mut self, beta: f64, ds: u32) -> Self {
        self.ball = Some(Ball { beta, ds });
        self
    }
}

/// Name of the main constraint in bound programs.
pub const BOUND_LABEL: &str = "bound";
/// Name of the ball multiplier.
pub const BALL_MULTIPLIER: &str = "S0";

#[derive(Clone, Debug, PartialEq)]
pub struct BoundCertificate {
    pub direction: Direction,
    pub c: f64,
    pub v: Polynomial,
    pub multipliers: BTreeMap<String, Polynomial>,
    pub ball: Option<Ball>,
    pub dv: u32,
    /// Positive factor multiplying `Φ0 − C` (the denominator of a rational
    /// vector field); 1 for polynomial dynamics.
    pub weight: Polynomial,
    /// Gram certificates in program order; the first proves the bound.
    pub grams: Vec<GramCertificate>,
    /// Pseudo-moments `L(x^α)` dual to the bound constraint, normalized so
    /// that `L(1) = 1` at optimality. `C = L(Φ0)` and `L(f·∇V) = 0` for every
    /// admissible `V`.
    pub moments: BTreeMap<Monomial, f64>,
    pub residuals: Residuals,
    pub iterations: usize,
}

impl BoundCertificate {
    /// `L(p)` over the stored pseudo-moments; monomials without a moment
    /// count as zero.
    pub fn moment_of(&self, p: &Polynomial) -> f64 {
        p.terms()
            .map(|(m, c)| c * self.moments.get(m).copied().unwrap_or(0.0))
            .sum()
    }

    /// Highest degree carrying a pseudo-moment.
    pub fn moment_degree(&self) -> u32 {
        self.moments.keys().map(|m| m.degree()).max().unwrap_or(0)
    }

    /// The numeric polynomial that must be SOS for this certificate.
    pub fn bound_expression(&self, f: &PolyVector, phi0: &Polynomial) -> Result<Polynomial, BoundError> {
        let n = f.nvars();
        let p = self.v.gradient().dot(f).map_err(SystemError::from)?;
        let mut p = &p + &(&self.weight * &(phi0 - &Polynomial::constant(n, self.c)));
        if self.direction == Direction::Upper {
            p = -&p;
        }
        if let (Some(ball), Some(s)) = (self.ball, self.multipliers.get(BALL_MULTIPLIER)) {
            p = &p - &(s * &ball_poly(n, ball.beta));
        }
        Ok(p)
    }

    /// Re-validate every stored Gram certificate against the numeric
    /// polynomials it claims to decompose.
    pub fn replay(&self, f: &PolyVector, phi0: &Polynomial) -> Result<f64, BoundError> {
        let Some(main) = self.grams.first() else {
            // Constant cost: the bound expression is identically zero.
            let p = self.bound_expression(f, phi0)?;
            return match p.max_abs_coeff() {
                r if r <= crate::sos::MATCH_TOL => Ok(r),
                r => Err(SosError::CertificateInvalid {
                    label: BOUND_LABEL.into(),
                    residual: r,
                    min_eig: 0.0,
                }
                .into()),
            };
        };
        let p = self.bound_expression(f, phi0)?;
        main.validate(&p)?;
        let mut worst = main.reconstruct(p.nvars()).max_coeff_diff(&p);
        for g in &self.grams[1..] {
            let name = g.label.trim_end_matches(" is SOS");
            if let Some(s) = self.multipliers.get(name) {
                g.validate(s)?;
                worst = worst.max(g.reconstruct(s.nvars()).max_coeff_diff(s));
            }
        }
        Ok(worst)
    }
}

/// `2β − xᵀx`.
pub fn ball_poly(nvars: usize, beta: f64) -> Polynomial {
    let mut p = Polynomial::constant(nvars, 2.0 * beta);
    for i in 0..nvars {
        p = &p - &Polynomial::var(nvars, i).pow(2);
    }
    p
}

/// Symbolic bound program with handles to its unknowns.
pub struct BoundProgram {
    pub program: SosProgram,
    pub spec: BoundSpec,
    weight: Polynomial,
    c: usize,
    v: Decision,
    s: Option<Decision>,
}

impl BoundProgram {
    pub fn new(f: &PolyVector, phi0: &Polynomial, spec: BoundSpec) -> Result<Self, BoundError> {
        Self::weighted(f, &Polynomial::constant(f.nvars(), 1.0), phi0, spec)
    }

    /// Bound program for `ẋ = f(x)/w(x)` with `w > 0`, after multiplying the
    /// drift condition through by `w`.
    pub fn weighted(
        f: &PolyVector,
        weight: &Polynomial,
        phi0: &Polynomial,
        spec: BoundSpec,
    ) -> Result<Self, BoundError> {
        let n = f.nvars();
        if spec.dv == 0 || spec.dv % 2 == 1 {
            return Err(BoundError::Degree(format!(
                "V degree must be even and positive, got {}",
                spec.dv
            )));
        }
        let mut prog = SosProgram::new(n);
        let v = prog.add_decision("V", &DecisionSpec::free(spec.dv).without_constant())?;
        let c = prog.add_scalar("C");

        let mut drift = PolyExpr::zero(n);
        for (i, fi) in f.iter().enumerate() {
            drift = drift.add(&v.expr.derivative(i).mul_poly(fi)?)?;
        }
        let cost = PolyExpr::from_poly(phi0).sub(&prog.scalar_expr(c))?;
        let mut expr = drift.add(&cost.mul_poly(weight)?)?;
        if spec.direction == Direction::Upper {
            expr = expr.scale(-1.0);
        }
        let mut s = None;
        if let Some(b) = spec.ball {
            if !(b.beta > 0.0 && b.beta.is_finite()) {
                return Err(BoundError::Degree(format!("ball beta must be positive, got {}", b.beta)));
            }
            let d = prog.add_decision(BALL_MULTIPLIER, &DecisionSpec::sos(b.ds))?;
            expr = expr.sub(&d.expr.mul_poly(&ball_poly(n, b.beta))?)?;
            s = Some(d);
        }
        prog.add_sos(BOUND_LABEL, expr)?;
        match spec.direction {
            Direction::Upper => prog.minimize(Affine::unknown(c)),
            Direction::Lower => prog.maximize(Affine::unknown(c)),
        }
        Ok(BoundProgram {
            program: prog,
            spec,
            weight: weight.clone(),
            c,
            v,
            s,
        })
    }

    pub fn solve(&self, opts: &SolveOptions) -> Result<BoundCertificate, BoundError> {
        let cert = match self.program.solve(opts) {
            Ok(c) => c,
            Err(SosError::Infeasible { .. }) | Err(SosError::SolverFailed { .. }) => {
                return Err(BoundError::NoCertificate {
                    dv: self.spec.dv,
                    hint: degree_hint(&self.spec),
                })
            }
            Err(SosError::Unbounded { .. }) => return Err(BoundError::Unbounded { dv: self.spec.dv }),
            Err(e) => return Err(e.into()),
        };
        Ok(self.certificate(cert))
    }

    fn certificate(&self, cert: Certificate) -> BoundCertificate {
        let mut multipliers = BTreeMap::new();
        if let Some(s) = &self.s {
            multipliers.insert(
                BALL_MULTIPLIER.to_string(),
                self.program.decision_value(s.id, &cert.values),
            );
        }
        let moments = cert.duals.last().cloned().unwrap_or_default();
        // The bound constraint comes last in the program; list it first.
        let mut grams = cert.grams;
        if let Some(main) = grams.pop() {
            grams.insert(0, main);
        }
        BoundCertificate {
            direction: self.spec.direction,
            c: cert.values[self.c],
            v: self.program.decision_value(self.v.id, &cert.values),
            multipliers,
            ball: self.spec.ball,
            dv: self.spec.dv,
            weight: self.weight.clone(),
            grams,
            moments,
            residuals: cert.sdp_residuals,
            iterations: cert.iterations,
        }
    }
}

fn degree_hint(spec: &BoundSpec) -> String {
    let mut hint = format!("; try a larger V degree (--dv {})", spec.dv + 2);
    if let Some(b) = spec.ball {
        hint.push_str(&format!(" or multiplier degree (--ds {})", b.ds + 2));
    } else if spec.direction == Direction::Upper {
        hint.push_str(" or restrict to a ball (--ball)");
    }
    hint
}

/// Solve a bound problem for the autonomous dynamics `ẋ = f(x)`.
pub fn bound_autonomous(
    f: &PolyVector,
    phi0: &Polynomial,
    spec: BoundSpec,
    opts: &SolveOptions,
) -> Result<BoundCertificate, BoundError> {
    if phi0.is_constant() {
        // Averages of a constant need no certificate search.
        BoundProgram::new(f, phi0, spec)?;
        let n = f.nvars();
        return Ok(BoundCertificate {
            direction: spec.direction,
            c: phi0.constant_term(),
            v: Polynomial::zero(n),
            multipliers: match spec.ball {
                Some(_) => [(BALL_MULTIPLIER.to_string(), Polynomial::zero(n))].into(),
                None => BTreeMap::new(),
            },
            ball: spec.ball,
            dv: spec.dv,
            weight: Polynomial::constant(n, 1.0),
            grams: Vec::new(),
            moments: [(Monomial::one(n), 1.0)].into(),
            residuals: Residuals::default(),
            iterations: 0,
        });
    }
    BoundProgram::new(f, phi0, spec)?.solve(opts)
}

/// Solve a bound problem for `ẋ = f(x)/w(x)`; the caller guarantees `w > 0`.
pub fn bound_weighted(
    f: &PolyVector,
    weight: &Polynomial,
    phi0: &Polynomial,
    spec: BoundSpec,
    opts: &SolveOptions,
) -> Result<BoundCertificate, BoundError> {
    BoundProgram::weighted(f, weight, phi0, spec)?.solve(opts)
}

/// Bound for the uncontrolled system.
pub fn bound(sys: &PolySystem, spec: BoundSpec, opts: &SolveOptions) -> Result<BoundCertificate, BoundError> {
    bound_autonomous(&sys.f, &sys.phi0, spec, opts)
}

pub fn upper_bound(sys: &PolySystem, dv: u32, opts: &SolveOptions) -> Result<BoundCertificate, BoundError> {
    bound(sys, BoundSpec::upper(dv), opts)
}

pub fn upper_bound_ball(
    sys: &PolySystem,
    dv: u32,
    ds: u32,
    beta: f64,
    opts: &SolveOptions,
) -> Result<BoundCertificate, BoundError> {
    bound(sys, BoundSpec::upper(dv).in_ball(beta, ds), opts)
}

pub fn lower_bound(sys: &PolySystem, dv: u32, opts: &SolveOptions) -> Result<BoundCertificate, BoundError> {
    bound(sys, BoundSpec::lower(dv), opts)
}

/// Multiplier used in the boundedness certificate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BoundednessMultiplier {
    /// `S ≡ 1`.
    #[default]
    Unit,
    /// SOS polynomial of the given even degree.
    Sos(u32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Boundedness {
    pub beta: f64,
    pub multiplier: Polynomial,
    pub gram: GramCertificate,
    /// Bisection steps taken.
    pub steps: usize,
}

fn boundedness_program(
    f: &PolyVector,
    beta: f64,
    mult: BoundednessMultiplier,
) -> Result<(SosProgram, Option<Decision>), BoundError> {
    let n = f.nvars();
    let mut prog = SosProgram::new(n);
    let x: Vec<Polynomial> = (0..n).map(|i| Polynomial::var(n, i)).collect();
    let xv = PolyVector::from_vec(n, x).map_err(SystemError::from)?;
    let radial = xv.dot(f).map_err(SystemError::from)?;
    // 0.5 xᵀx − β
    let shell = ball_poly(n, beta).scale(-0.5);
    let base = PolyExpr::from_poly(&radial).scale(-1.0);
    let (expr, s) = match mult {
        BoundednessMultiplier::Unit => (base.sub(&PolyExpr::from_poly(&shell))?, None),
        BoundednessMultiplier::Sos(d) => {
            let s = prog.add_decision("S", &DecisionSpec::sos(d))?;
            (base.sub(&s.expr.mul_poly(&shell)?)?, Some(s))
        }
    };
    prog.add_sos("boundedness", expr)?;
    Ok((prog, s))
}

/// Smallest β in `(0, beta_max]`, to within `tol`, for which
/// `−(x·f(x) + S(x)(xᵀx/2 − β))` is SOS. Every trajectory then enters and
/// stays in the ball `xᵀx <= 2β`.
pub fn certify_bounded(
    f: &PolyVector,
    beta_max: f64,
    mult: BoundednessMultiplier,
    tol: f64,
    opts: &SolveOptions,
) -> Result<Boundedness, BoundError> {
    let try_beta = |beta: f64| -> Result<Option<(Polynomial, GramCertificate)>, BoundError> {
        let (prog, s) = boundedness_program(f, beta, mult)?;
        match prog.solve(opts) {
            Ok(cert) => {
                let m = match &s {
                    Some(d) => prog.decision_value(d.id, &cert.values),
                    None => Polynomial::constant(f.nvars(), 1.0),
                };
                let g = cert
                    .gram("boundedness")
                    .cloned()
                    .expect("boundedness constraint has a Gram certificate");
                Ok(Some((m, g)))
            }
            Err(SosError::Infeasible { .. } | SosError::SolverFailed { .. } | SosError::CertificateInvalid { .. }) => {
                Ok(None)
            }
            Err(e) => Err(e.into()),
        }
    };
    let Some(mut best) = try_beta(beta_max)? else {
        return Err(BoundError::NotBounded { beta_max });
    };
    let (mut lo, mut hi) = (0.0, beta_max);
    let mut steps = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        steps += 1;
        match try_beta(mid)? {
            Some(found) => {
                hi = mid;
                best = found;
            }
            None => lo = mid,
        }
    }
    Ok(Boundedness {
        beta: hi,
        multiplier: best.0,
        gram: best.1,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(text: &str) -> PolySystem {
        PolySystem::parse(text).unwrap()
    }

    fn b1() -> PolySystem {
        sys("vars 1 1\nf: x1 - x1^3\nG: 1\nphi0: x1^2\n")
    }

    fn opts() -> SolveOptions {
        SolveOptions::default()
    }

    #[test]
    fn b1_upper_bound() {
        let s = b1();
        let cert = upper_bound(&s, 2, &opts()).unwrap();
        assert!((cert.c - 1.0).abs() < 1e-3, "{}", cert.c);
        let want = Polynomial::parse("0.5*x1^2", 1).unwrap();
        assert!(cert.v.max_coeff_diff(&want) < 1e-4, "{:?}", cert.v);
        assert!(cert.replay(&s.f, &s.phi0).unwrap() <= 1e-6);
        // residue is (x²−1)²
        let residue = cert.bound_expression(&s.f, &s.phi0).unwrap();
        let sq = Polynomial::parse("(x1^2 - 1)^2", 1).unwrap();
        assert!(residue.max_coeff_diff(&sq) < 1e-3);
        // Pseudo-moments: L(1) = 1, L(x²) = C.
        assert!((cert.moment_of(&Polynomial::constant(1, 1.0)) - 1.0).abs() < 1e-6);
        assert!((cert.moment_of(&s.phi0) - cert.c).abs() < 1e-6);
    }

    #[test]
    fn stable_origin_and_constant_cost() {
        let s = sys("vars 1 0\nf: -x1\nphi0: x1^2\n");
        let up = upper_bound(&s, 2, &opts()).unwrap();
        assert!(up.c.abs() < 1e-3);
        let lo = lower_bound(&s, 2, &opts()).unwrap();
        assert!(lo.c.abs() < 1e-3);

        let s = sys("vars 1 0\nf: x1 - x1^3\nphi0: 1\n");
        let up = upper_bound(&s, 2, &opts()).unwrap();
        assert_eq!(up.c, 1.0);
        assert_eq!(up.iterations, 0);
        up.replay(&s.f, &s.phi0).unwrap();
        assert_eq!(lower_bound(&s, 4, &opts()).unwrap().c, 1.0);
    }

    #[test]
    fn b1_lower_bound() {
        let s = b1();
        let cert = lower_bound(&s, 2, &opts()).unwrap();
        assert!(cert.c.abs() < 1e-3, "{}", cert.c);
        cert.replay(&s.f, &s.phi0).unwrap();
    }

    #[test]
    fn ball_matches_global_when_inactive() {
        let s = b1();
        let cert = upper_bound_ball(&s, 2, 2, 50.0, &opts()).unwrap();
        assert!((cert.c - 1.0).abs() < 1e-3, "{}", cert.c);
        assert!(cert.multipliers.contains_key(BALL_MULTIPLIER));
        cert.replay(&s.f, &s.phi0).unwrap();
        assert_eq!(cert.grams.len(), 2);
    }

    #[test]
    fn odd_degree_rejected() {
        assert!(matches!(upper_bound(&b1(), 3, &opts()), Err(BoundError::Degree(_))));
    }

    #[test]
    fn tampered_certificate_fails_replay() {
        let s = b1();
        let mut cert = upper_bound(&s, 2, &opts()).unwrap();
        cert.c -= 0.01;
        assert!(cert.replay(&s.f, &s.phi0).is_err());
    }

    #[test]
    fn boundedness_bisection() {
        let f = |t: &str| PolyVector::from_vec(1, vec![Polynomial::parse(t, 1).unwrap()]).unwrap();
        let b = certify_bounded(&f("x1 - x1^3"), 100.0, BoundednessMultiplier::Unit, 1e-3, &opts()).unwrap();
        assert!((b.beta - 0.5625).abs() < 0.01, "{}", b.beta);

        let b = certify_bounded(&f("-x1"), 100.0, BoundednessMultiplier::Unit, 1e-3, &opts()).unwrap();
        assert!(b.beta <= 0.01, "{}", b.beta);

        let err = certify_bounded(&f("x1"), 100.0, BoundednessMultiplier::Unit, 1e-3, &opts());
        assert!(matches!(err, Err(BoundError::NotBounded { .. })));

        // An optimized constant multiplier does better than S = 1.
        let b = certify_bounded(&f("x1 - x1^3"), 100.0, BoundednessMultiplier::Sos(0), 1e-3, &opts()).unwrap();
        assert!((b.beta - 0.5).abs() < 0.01, "{}", b.beta);
    }
}
