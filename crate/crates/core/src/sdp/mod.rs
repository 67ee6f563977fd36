//! Standard-form semidefinite programs.
//!
//! Primal:  minimize ⟨C, X⟩ + c_fᵀ x_f  subject to  ⟨A_i, X⟩ + a_{f,i}ᵀ x_f = b_i,  X ⪰ 0
//! Dual:    maximize bᵀ y  subject to  Σ y_i A_i + S = C,  Σ y_i a_{f,i} = c_f,  S ⪰ 0
//!
//! `X` is block diagonal with PSD blocks; `x_f` is an unconstrained vector
//! stored as an extra "free block" whose entries live on its diagonal.

mod ipm;
mod presolve;
mod sdpa;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

pub use ipm::solve;
pub use presolve::{presolve, Presolved};
pub use sdpa::{export_sdpa, import_sdpa};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdpError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// One stored coefficient of a symmetric matrix. For PSD blocks `row <= col`
/// and an off-diagonal entry stands for both `(row, col)` and `(col, row)`.
/// For the free block `row == col` is the free-variable index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl Entry {
    pub fn new(block: usize, row: usize, col: usize, value: f64) -> Self {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        Entry {
            block,
            row,
            col,
            value,
        }
    }
}

/// Sort entries, merge duplicates by summation and drop exact zeros.
fn canonicalize(mut entries: Vec<Entry>) -> Vec<Entry> {
    for e in &mut entries {
        if e.row > e.col {
            std::mem::swap(&mut e.row, &mut e.col);
        }
    }
    entries.sort_by_key(|e| (e.block, e.row, e.col));
    let mut out: Vec<Entry> = Vec::with_capacity(entries.len());
    for e in entries {
        match out.last_mut() {
            Some(last) if (last.block, last.row, last.col) == (e.block, e.row, e.col) => {
                last.value += e.value
            }
            _ => out.push(e),
        }
    }
    out.retain(|e| e.value != 0.0);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    psd_sizes: Vec<usize>,
    nfree: usize,
    objective: Vec<Entry>,
    constraints: Vec<Vec<Entry>>,
    b: Vec<f64>,
}

impl SdpProblem {
    pub fn new(psd_sizes: Vec<usize>, nfree: usize) -> Self {
        SdpProblem {
            psd_sizes,
            nfree,
            objective: Vec::new(),
            constraints: Vec::new(),
            b: Vec::new(),
        }
    }

    /// Index used for the free block in [`Entry::block`].
    pub fn free_block(&self) -> usize {
        self.psd_sizes.len()
    }

    pub fn psd_sizes(&self) -> &[usize] {
        &self.psd_sizes
    }

    pub fn nfree(&self) -> usize {
        self.nfree
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective(&self) -> &[Entry] {
        &self.objective
    }

    pub fn constraint(&self, i: usize) -> &[Entry] {
        &self.constraints[i]
    }

    pub fn constraints(&self) -> &[Vec<Entry>] {
        &self.constraints
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn set_objective(&mut self, entries: Vec<Entry>) -> Result<(), SdpError> {
        let entries = canonicalize(entries);
        self.check_entries(&entries)?;
        self.objective = entries;
        Ok(())
    }

    pub fn add_constraint(&mut self, entries: Vec<Entry>, rhs: f64) -> Result<usize, SdpError> {
        let entries = canonicalize(entries);
        self.check_entries(&entries)?;
        if !rhs.is_finite() {
            return Err(SdpError::Invalid("non-finite right-hand side".into()));
        }
        self.constraints.push(entries);
        self.b.push(rhs);
        Ok(self.constraints.len() - 1)
    }

    fn check_entries(&self, entries: &[Entry]) -> Result<(), SdpError> {
        for e in entries {
            if !e.value.is_finite() {
                return Err(SdpError::Invalid("non-finite coefficient".into()));
            }
            if e.block < self.psd_sizes.len() {
                let n = self.psd_sizes[e.block];
                if e.col >= n {
                    return Err(SdpError::Invalid(format!(
                        "entry ({}, {}) outside block {} of size {n}",
                        e.row, e.col, e.block
                    )));
                }
            } else if e.block == self.free_block() {
                if e.row != e.col || e.row >= self.nfree {
                    return Err(SdpError::Invalid(format!(
                        "bad free-block entry ({}, {})",
                        e.row, e.col
                    )));
                }
            } else {
                return Err(SdpError::Invalid(format!("no block {}", e.block)));
            }
        }
        Ok(())
    }

    /// ⟨A, X⟩ + a_fᵀ x_f for a stored coefficient list.
    pub fn apply(entries: &[Entry], x: &[DMatrix<f64>], x_free: &[f64]) -> f64 {
        entries
            .iter()
            .map(|e| {
                if e.block == x.len() {
                    e.value * x_free[e.row]
                } else if e.row == e.col {
                    e.value * x[e.block][(e.row, e.col)]
                } else {
                    2.0 * e.value * x[e.block][(e.row, e.col)]
                }
            })
            .sum()
    }

    /// Dense symmetric blocks and free vector of a coefficient list.
    pub fn densify(&self, entries: &[Entry]) -> (Vec<DMatrix<f64>>, Vec<f64>) {
        let mut blocks: Vec<DMatrix<f64>> =
            self.psd_sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        let mut free = vec![0.0; self.nfree];
        add_scaled(&mut blocks, &mut free, entries, 1.0);
        (blocks, free)
    }

    /// Σ y_i A_i as dense blocks plus the free-block vector.
    pub fn adjoint(&self, y: &[f64]) -> (Vec<DMatrix<f64>>, Vec<f64>) {
        let mut blocks: Vec<DMatrix<f64>> =
            self.psd_sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        let mut free = vec![0.0; self.nfree];
        for (a, &yi) in self.constraints.iter().zip(y) {
            add_scaled(&mut blocks, &mut free, a, yi);
        }
        (blocks, free)
    }

    /// Keep only the listed constraints, in the given order.
    pub fn select_constraints(&self, keep: &[usize]) -> SdpProblem {
        SdpProblem {
            psd_sizes: self.psd_sizes.clone(),
            nfree: self.nfree,
            objective: self.objective.clone(),
            constraints: keep.iter().map(|&i| self.constraints[i].clone()).collect(),
            b: keep.iter().map(|&i| self.b[i]).collect(),
        }
    }
}

fn add_scaled(blocks: &mut [DMatrix<f64>], free: &mut [f64], entries: &[Entry], s: f64) {
    if s == 0.0 {
        return;
    }
    for e in entries {
        if e.block == blocks.len() {
            free[e.row] += s * e.value;
        } else {
            let blk = &mut blocks[e.block];
            blk[(e.row, e.col)] += s * e.value;
            if e.row != e.col {
                blk[(e.col, e.row)] += s * e.value;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdpStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIters,
    NumericalFailure,
}

impl std::fmt::Display for SdpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SdpStatus::Optimal => "optimal",
            SdpStatus::PrimalInfeasible => "primal-infeasible",
            SdpStatus::DualInfeasible => "dual-infeasible",
            SdpStatus::MaxIters => "max-iters",
            SdpStatus::NumericalFailure => "numerical-failure",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: Vec<DMatrix<f64>>,
    pub x_free: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<DMatrix<f64>>,
    pub residuals: Residuals,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            gap_tol: 1e-8,
            feas_tol: 1e-8,
            max_iters: 200,
        }
    }
}

/// ‖A(X) − b‖∞, ‖Aᵀy + S − C‖∞ (free block compared against c_f), and the
/// relative objective gap |⟨C,X⟩ − bᵀy| / (1 + |bᵀy|).
pub fn residuals(
    p: &SdpProblem,
    x: &[DMatrix<f64>],
    x_free: &[f64],
    y: &[f64],
    s: &[DMatrix<f64>],
) -> Residuals {
    let primal = p
        .constraints
        .iter()
        .zip(&p.b)
        .map(|(a, bi)| (SdpProblem::apply(a, x, x_free) - bi).abs())
        .fold(0.0, f64::max);
    let (mut aty, aty_free) = p.adjoint(y);
    let (c, c_free) = p.densify(&p.objective);
    let mut dual: f64 = 0.0;
    for ((a, si), ci) in aty.iter_mut().zip(s).zip(&c) {
        *a += si;
        *a -= ci;
        dual = dual.max(a.amax());
    }
    for (a, ci) in aty_free.iter().zip(&c_free) {
        dual = dual.max((a - ci).abs());
    }
    let pobj = SdpProblem::apply(&p.objective, x, x_free);
    let dobj: f64 = p.b.iter().zip(y).map(|(b, y)| b * y).sum();
    Residuals {
        primal,
        dual,
        gap: (pobj - dobj).abs() / (1.0 + dobj.abs()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_by_two() -> SdpProblem {
        // min x  s.t. [[x,1],[1,x]] ⪰ 0, written with X = [[x,1],[1,x]].
        let mut p = SdpProblem::new(vec![2], 0);
        p.set_objective(vec![Entry::new(0, 0, 0, 0.5), Entry::new(0, 1, 1, 0.5)])
            .unwrap();
        p.add_constraint(vec![Entry::new(0, 0, 1, 0.5)], 1.0).unwrap();
        p.add_constraint(vec![Entry::new(0, 0, 0, 1.0), Entry::new(0, 1, 1, -1.0)], 0.0)
            .unwrap();
        p
    }

    #[test]
    fn entries_are_canonical() {
        let mut p = SdpProblem::new(vec![3], 1);
        p.add_constraint(
            vec![
                Entry::new(0, 2, 1, 1.0),
                Entry::new(0, 1, 2, 1.0),
                Entry::new(1, 0, 0, 0.0),
                Entry::new(0, 0, 0, 3.0),
            ],
            1.0,
        )
        .unwrap();
        let c = p.constraint(0);
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].row, c[0].col, c[0].value), (0, 0, 3.0));
        assert_eq!((c[1].row, c[1].col, c[1].value), (1, 2, 2.0));
    }

    #[test]
    fn rejects_out_of_range_entries() {
        let mut p = SdpProblem::new(vec![2], 1);
        assert!(p.add_constraint(vec![Entry::new(0, 0, 2, 1.0)], 0.0).is_err());
        assert!(p.add_constraint(vec![Entry::new(1, 0, 1, 1.0)], 0.0).is_err());
        assert!(p.add_constraint(vec![Entry::new(2, 0, 0, 1.0)], 0.0).is_err());
    }

    #[test]
    fn residuals_of_perturbed_point() {
        let p = two_by_two();
        let x = vec![DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])];
        let y = vec![1.0, 0.0];
        let s = vec![DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5])];
        let r = residuals(&p, &x, &[], &y, &s);
        assert_eq!(r.primal, 0.0);
        assert_eq!(r.dual, 0.0);
        assert_eq!(r.gap, 0.0);

        let mut bumped = x.clone();
        bumped[0][(0, 0)] += 1.0;
        let r = residuals(&p, &bumped, &[], &y, &s);
        assert_eq!(r.primal, 1.0);
    }

    #[test]
    fn zero_problem_has_zero_residuals() {
        let p = SdpProblem::new(vec![2], 0);
        let x = vec![DMatrix::zeros(2, 2)];
        let r = residuals(&p, &x, &[], &[], &x);
        assert_eq!(r, Residuals::default());
    }
}
