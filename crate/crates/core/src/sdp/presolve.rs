use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::SdpProblem;

const PIVOT_TOL: f64 = 1e-10;
const CONSISTENCY_TOL: f64 = 1e-8;

/// Result of removing linearly dependent equality constraints.
#[derive(Debug, Clone)]
pub struct Presolved {
    pub problem: SdpProblem,
    /// Indices of the original constraints that were kept, in order.
    pub kept: Vec<usize>,
    /// Largest mismatch of a dropped right-hand side against the combination
    /// of kept rows that reproduces its coefficients. A value above the
    /// tolerance means the equalities are inconsistent.
    pub inconsistency: f64,
}

impl Presolved {
    pub fn is_consistent(&self) -> bool {
        self.inconsistency <= CONSISTENCY_TOL
    }

    /// Scatter a dual vector of the reduced problem back to full length.
    pub fn expand_dual(&self, y: &[f64], m: usize) -> Vec<f64> {
        let mut full = vec![0.0; m];
        for (&i, &v) in self.kept.iter().zip(y) {
            full[i] = v;
        }
        full
    }
}

/// Rank-revealing QR with column pivoting on the constraint coefficient
/// matrix (rows normalized). Rows whose pivot falls below `1e-10` relative to
/// the leading pivot are dropped.
pub fn presolve(p: &SdpProblem) -> Presolved {
    let m = p.num_constraints();
    if m == 0 {
        return Presolved {
            problem: p.clone(),
            kept: Vec::new(),
            inconsistency: 0.0,
        };
    }

    // Coordinates are (block, row, col) triples that actually occur.
    let mut coords: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
    for a in p.constraints() {
        for e in a {
            let next = coords.len();
            coords.entry((e.block, e.row, e.col)).or_insert(next);
        }
    }
    let ncoord = coords.len();
    let mut at = DMatrix::<f64>::zeros(ncoord.max(1), m);
    let mut b = DVector::<f64>::zeros(m);
    for (i, a) in p.constraints().iter().enumerate() {
        let mut norm2 = 0.0;
        for e in a {
            // Off-diagonal entries count twice in the trace inner product.
            let w = if e.block < p.free_block() && e.row != e.col {
                2.0
            } else {
                1.0
            };
            let v = w * e.value;
            at[(coords[&(e.block, e.row, e.col)], i)] = v;
            norm2 += v * v;
        }
        let scale = if norm2 > 0.0 { 1.0 / norm2.sqrt() } else { 1.0 };
        at.column_mut(i).scale_mut(scale);
        b[i] = p.rhs()[i] * scale;
    }

    let qr = at.col_piv_qr();
    let r = qr.r();
    let mut order: Vec<usize> = (0..m).collect();
    {
        let mut idx = DMatrix::<f64>::from_fn(1, m, |_, j| j as f64);
        qr.p().permute_columns(&mut idx);
        for (j, o) in order.iter_mut().enumerate() {
            *o = idx[(0, j)] as usize;
        }
    }
    let lead = if r.nrows() > 0 && r.ncols() > 0 {
        r[(0, 0)].abs()
    } else {
        0.0
    };
    let diag = r.nrows().min(m);
    let rank = (0..diag)
        .take_while(|&k| lead > 0.0 && r[(k, k)].abs() > PIVOT_TOL * lead)
        .count();

    let mut inconsistency: f64 = 0.0;
    if rank < m {
        // Dropped column j satisfies a_j ≈ A_kept · R11⁻¹ R12[:, j].
        let r11 = r.view((0, 0), (rank, rank)).into_owned();
        let r12 = r.view((0, rank), (rank, m - rank)).into_owned();
        let lambda = if rank > 0 {
            r11.solve_upper_triangular(&r12)
                .unwrap_or_else(|| DMatrix::zeros(rank, m - rank))
        } else {
            DMatrix::zeros(0, m - rank)
        };
        let b_kept = DVector::from_iterator(rank, order[..rank].iter().map(|&i| b[i]));
        for (k, &j) in order[rank..].iter().enumerate() {
            let predicted = lambda.column(k).dot(&b_kept);
            inconsistency = inconsistency.max((b[j] - predicted).abs());
        }
    }

    let mut kept: Vec<usize> = order[..rank].to_vec();
    kept.sort_unstable();
    Presolved {
        problem: p.select_constraints(&kept),
        kept,
        inconsistency,
    }
}

#[cfg(test)]
mod tests {
    use super::super::Entry;
    use super::*;

    #[test]
    fn drops_duplicate_rows() {
        let mut p = SdpProblem::new(vec![2], 1);
        p.add_constraint(vec![Entry::new(0, 0, 0, 1.0)], 1.0).unwrap();
        p.add_constraint(vec![Entry::new(0, 0, 1, 1.0), Entry::new(1, 0, 0, 1.0)], 0.0)
            .unwrap();
        p.add_constraint(vec![Entry::new(0, 0, 0, 2.0)], 2.0).unwrap();
        p.add_constraint(vec![Entry::new(0, 1, 1, 1.0)], 3.0).unwrap();
        let pre = presolve(&p);
        assert_eq!(pre.kept.len(), 3);
        assert!(pre.is_consistent());
        assert!(pre.kept.contains(&1) && pre.kept.contains(&3));
    }

    #[test]
    fn detects_inconsistent_rows() {
        let mut p = SdpProblem::new(vec![1], 0);
        p.add_constraint(vec![Entry::new(0, 0, 0, 1.0)], 1.0).unwrap();
        p.add_constraint(vec![Entry::new(0, 0, 0, 1.0)], 2.0).unwrap();
        let pre = presolve(&p);
        assert_eq!(pre.kept.len(), 1);
        assert!(!pre.is_consistent());
    }

    #[test]
    fn empty_row_with_nonzero_rhs_is_inconsistent() {
        let mut p = SdpProblem::new(vec![1], 0);
        p.add_constraint(vec![Entry::new(0, 0, 0, 1.0)], 1.0).unwrap();
        p.add_constraint(vec![], 0.5).unwrap();
        let pre = presolve(&p);
        assert_eq!(pre.kept, vec![0]);
        assert!(!pre.is_consistent());
    }

    #[test]
    fn full_rank_is_untouched() {
        let mut p = SdpProblem::new(vec![2], 0);
        p.add_constraint(vec![Entry::new(0, 0, 0, 1.0)], 1.0).unwrap();
        p.add_constraint(vec![Entry::new(0, 1, 1, 1.0), Entry::new(0, 0, 0, 1.0)], 1.0)
            .unwrap();
        let pre = presolve(&p);
        assert_eq!(pre.kept, vec![0, 1]);
        assert_eq!(pre.inconsistency, 0.0);
    }
}
