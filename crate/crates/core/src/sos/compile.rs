use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::poly::{Monomial, Polynomial};
use crate::sdp::{Entry, Residuals, SdpProblem, SdpSolution, SdpStatus};

use super::{
    gram_basis, invariant_sign_groups, split_by_parity, ConstraintKind, Sense, SosError,
    SosProgram,
};

/// Coefficient-matching tolerance for Gram reconstructions (∞-norm).
pub const MATCH_TOL: f64 = 1e-6;
/// Smallest admissible Gram eigenvalue.
pub const EIG_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct CompiledProgram {
    pub sdp: SdpProblem,
    /// For each program constraint, the SDP blocks and bases of its Gram
    /// matrix (empty for equality constraints).
    pub layout: Vec<Vec<(usize, Vec<Monomial>)>>,
    /// Program constraint and monomial of each SDP equality row.
    pub rows: Vec<(usize, Monomial)>,
}

/// Translate `prog` into a standard-form SDP.
///
/// Every scalar unknown becomes an entry of the free block. Each SOS
/// constraint gets one PSD block per parity class of its Gram basis, and one
/// equality per monomial in the expression's support or in the Gram products.
pub fn compile(prog: &SosProgram) -> Result<CompiledProgram, SosError> {
    let nvars = prog.nvars();
    let nfree = prog.num_unknowns();

    let mut sizes = Vec::new();
    let mut layout = Vec::with_capacity(prog.constraints().len());
    for c in prog.constraints() {
        if c.kind == ConstraintKind::Zero {
            layout.push(Vec::new());
            continue;
        }
        let support = SosProgram::support(&c.expr);
        let basis = gram_basis(nvars, &support, prog.groups());
        if basis.is_empty() && c.expr.unknowns().is_empty() && !c.expr.is_zero() {
            return Err(SosError::EmptyBasis {
                label: c.label.clone(),
            });
        }
        let sym = invariant_sign_groups(nvars, &support, prog.groups());
        let mut blocks = Vec::new();
        for part in split_by_parity(&basis, &sym) {
            blocks.push((sizes.len(), part.clone()));
            sizes.push(part.len());
        }
        layout.push(blocks);
    }

    let mut sdp = SdpProblem::new(sizes, nfree);
    let fb = sdp.free_block();
    let mut row_keys = Vec::new();
    for (ci, (c, blocks)) in prog.constraints().iter().zip(&layout).enumerate() {
        let mut rows: BTreeMap<Monomial, (Vec<Entry>, f64)> = BTreeMap::new();
        for (blk, basis) in blocks {
            for a in 0..basis.len() {
                for b in a..basis.len() {
                    let g = basis[a].mul(&basis[b]);
                    rows.entry(g).or_default().0.push(Entry::new(*blk, a, b, 1.0));
                }
            }
        }
        let sign = if c.kind == ConstraintKind::Sos { -1.0 } else { 1.0 };
        for (m, aff) in c.expr.terms() {
            let row = rows.entry(m.clone()).or_default();
            for (&k, &v) in &aff.coeffs {
                row.0.push(Entry::new(fb, k, k, sign * v));
            }
            row.1 = -sign * aff.constant;
        }
        for (mono, (entries, rhs)) in rows {
            if entries.is_empty() && rhs == 0.0 {
                continue;
            }
            sdp.add_constraint(entries, rhs)?;
            row_keys.push((ci, mono));
        }
    }

    if let Some((sense, obj)) = prog.objective() {
        let sign = if *sense == Sense::Maximize { -1.0 } else { 1.0 };
        let entries = obj
            .coeffs
            .iter()
            .map(|(&k, &v)| Entry::new(fb, k, k, sign * v))
            .collect();
        sdp.set_objective(entries)?;
    }
    Ok(CompiledProgram {
        sdp,
        layout,
        rows: row_keys,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GramBlock {
    pub basis: Vec<Monomial>,
    pub q: DMatrix<f64>,
}

/// Gram matrices of one SOS constraint and their validation figures.
#[derive(Clone, Debug, PartialEq)]
pub struct GramCertificate {
    pub label: String,
    pub blocks: Vec<GramBlock>,
    /// ∞-norm of the coefficient mismatch between the constraint
    /// expression and Σ mᵀQm.
    pub residual: f64,
    pub min_eig: f64,
}

impl GramCertificate {
    /// Σ mᵀQm over all blocks.
    pub fn reconstruct(&self, nvars: usize) -> Polynomial {
        let mut p = Polynomial::zero(nvars);
        for blk in &self.blocks {
            for a in 0..blk.basis.len() {
                for b in 0..blk.basis.len() {
                    let v = blk.q[(a, b)];
                    if v != 0.0 {
                        p.add_term(blk.basis[a].mul(&blk.basis[b]), v);
                    }
                }
            }
        }
        p
    }

    /// Check that this Gram certificate proves `p` is SOS.
    pub fn validate(&self, p: &Polynomial) -> Result<(), SosError> {
        let residual = self.reconstruct(p.nvars()).max_coeff_diff(p);
        if residual > MATCH_TOL || self.min_eig < -EIG_TOL {
            return Err(SosError::CertificateInvalid {
                label: self.label.clone(),
                residual,
                min_eig: self.min_eig,
            });
        }
        Ok(())
    }
}

/// Numeric solution of an SOS program with its Gram certificates.
#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub status: SdpStatus,
    pub values: Vec<f64>,
    pub objective: f64,
    /// One entry per SOS constraint, in program order.
    pub grams: Vec<GramCertificate>,
    /// Per program constraint, the negated dual multiplier of each
    /// coefficient-matching row. For an SOS constraint this is a linear
    /// functional on polynomials that is nonnegative on the SOS cone
    /// (pseudo-moments).
    pub duals: Vec<BTreeMap<Monomial, f64>>,
    pub sdp_residuals: Residuals,
    pub iterations: usize,
}

impl Certificate {
    pub fn gram(&self, label: &str) -> Option<&GramCertificate> {
        self.grams.iter().find(|g| g.label == label)
    }

    pub fn max_residual(&self) -> f64 {
        self.grams.iter().map(|g| g.residual).fold(0.0, f64::max)
    }
}

fn symmetric_min_eig(q: &DMatrix<f64>) -> f64 {
    if q.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(q.clone()).eigenvalues.min()
}

/// Read unknown values and Gram matrices out of an SDP solution and check
/// them against the program. Infeasible and unbounded statuses are errors;
/// other non-optimal statuses are accepted when the certificate validates.
pub fn extract_certificate(
    prog: &SosProgram,
    compiled: &CompiledProgram,
    sol: &SdpSolution,
) -> Result<Certificate, SosError> {
    match sol.status {
        SdpStatus::PrimalInfeasible => return Err(SosError::Infeasible { status: sol.status }),
        SdpStatus::DualInfeasible => return Err(SosError::Unbounded { status: sol.status }),
        _ => {}
    }
    let values = sol.x_free.clone();
    let mut grams = Vec::new();
    for (c, blocks) in prog.constraints().iter().zip(&compiled.layout) {
        let target = c.expr.evaluate(&values);
        if c.kind == ConstraintKind::Zero {
            let residual = target.max_abs_coeff();
            if residual > MATCH_TOL {
                return Err(status_error(sol.status, &c.label, residual, 0.0));
            }
            continue;
        }
        let gblocks: Vec<GramBlock> = blocks
            .iter()
            .map(|(blk, basis)| GramBlock {
                basis: basis.clone(),
                q: sol.x[*blk].clone(),
            })
            .collect();
        let min_eig = gblocks
            .iter()
            .map(|b| symmetric_min_eig(&b.q))
            .fold(f64::INFINITY, f64::min);
        let mut g = GramCertificate {
            label: c.label.clone(),
            blocks: gblocks,
            residual: 0.0,
            min_eig: if min_eig.is_finite() { min_eig } else { 0.0 },
        };
        g.residual = g.reconstruct(prog.nvars()).max_coeff_diff(&target);
        if g.residual > MATCH_TOL || g.min_eig < -EIG_TOL {
            return Err(status_error(sol.status, &c.label, g.residual, g.min_eig));
        }
        grams.push(g);
    }
    let objective = match prog.objective() {
        Some((_, obj)) => obj.eval(&values),
        None => 0.0,
    };
    let mut duals = vec![BTreeMap::new(); prog.constraints().len()];
    for ((ci, mono), y) in compiled.rows.iter().zip(&sol.y) {
        duals[*ci].insert(mono.clone(), -y);
    }
    Ok(Certificate {
        status: sol.status,
        values,
        objective,
        grams,
        duals,
        sdp_residuals: sol.residuals,
        iterations: sol.iterations,
    })
}

fn status_error(status: SdpStatus, label: &str, residual: f64, min_eig: f64) -> SosError {
    match status {
        SdpStatus::Optimal => SosError::CertificateInvalid {
            label: label.to_string(),
            residual,
            min_eig,
        },
        _ => SosError::SolverFailed { status },
    }
}
