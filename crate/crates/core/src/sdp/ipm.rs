//! Infeasible-start primal-dual path following with the HKM direction and a
//! Mehrotra predictor-corrector.
//!
//! The Newton system is reduced to the saddle form
//!
//! ```text
//! [ M   B ] [dy ]   [h ]
//! [ Bᵀ  0 ] [dxf] = [rf]
//! ```
//!
//! where `M_ij = tr(A_i X A_j S⁻¹)` and `B` holds the free-variable columns.
//! It is factored with dense LU (a tiny diagonal shift on the free block keeps
//! it nonsingular when free variables are degenerate) and polished with
//! iterative refinement against the unshifted matrix.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::{presolve, residuals, SdpProblem, SdpSolution, SdpStatus, SolveOptions};

/// Entries of one constraint restricted to one PSD block, expanded to both
/// triangles.
struct BlockPart {
    block: usize,
    entries: Vec<(usize, usize, f64)>,
}

struct Compiled {
    sizes: Vec<usize>,
    nfree: usize,
    parts: Vec<Vec<BlockPart>>,
    /// Per block: (constraint, index into parts[constraint]).
    by_block: Vec<Vec<(usize, usize)>>,
    free_cols: DMatrix<f64>,
    c: Vec<DMatrix<f64>>,
    c_free: DVector<f64>,
    b: DVector<f64>,
}

impl Compiled {
    fn new(p: &SdpProblem) -> Self {
        let sizes = p.psd_sizes().to_vec();
        let nb = sizes.len();
        let m = p.num_constraints();
        let mut parts = Vec::with_capacity(m);
        let mut by_block = vec![Vec::new(); nb];
        let mut free_cols = DMatrix::zeros(m, p.nfree());
        for (i, a) in p.constraints().iter().enumerate() {
            let mut mine: Vec<BlockPart> = Vec::new();
            for e in a {
                if e.block == nb {
                    free_cols[(i, e.row)] += e.value;
                    continue;
                }
                if mine.last().map(|bp| bp.block) != Some(e.block) {
                    by_block[e.block].push((i, mine.len()));
                    mine.push(BlockPart {
                        block: e.block,
                        entries: Vec::new(),
                    });
                }
                let bp = mine.last_mut().unwrap();
                bp.entries.push((e.row, e.col, e.value));
                if e.row != e.col {
                    bp.entries.push((e.col, e.row, e.value));
                }
            }
            parts.push(mine);
        }
        let (c, c_free) = p.densify(p.objective());
        Compiled {
            sizes,
            nfree: p.nfree(),
            parts,
            by_block,
            free_cols,
            c,
            c_free: DVector::from_vec(c_free),
            b: DVector::from_column_slice(p.rhs()),
        }
    }

    fn m(&self) -> usize {
        self.b.len()
    }

    /// A(Z)_i = tr(A_i Z) for dense (not necessarily symmetric) blocks.
    fn op(&self, z: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(
            self.m(),
            self.parts.iter().map(|ps| {
                ps.iter()
                    .map(|bp| {
                        let zb = &z[bp.block];
                        bp.entries.iter().map(|&(r, c, v)| v * zb[(c, r)]).sum::<f64>()
                    })
                    .sum()
            }),
        )
    }

    /// Σ y_i A_i on the PSD blocks.
    fn adj(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = self.sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for (ps, &yi) in self.parts.iter().zip(y.iter()) {
            if yi == 0.0 {
                continue;
            }
            for bp in ps {
                let ob = &mut out[bp.block];
                for &(r, c, v) in &bp.entries {
                    ob[(r, c)] += yi * v;
                }
            }
        }
        out
    }

    fn schur(&self, x: &[DMatrix<f64>], sinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let m = self.m();
        let mut mat = DMatrix::zeros(m, m);
        for (blk, users) in self.by_block.iter().enumerate() {
            let n = self.sizes[blk];
            let xb = &x[blk];
            let sb = &sinv[blk];
            let mut u = DMatrix::<f64>::zeros(n, n);
            for &(i, pi) in users {
                // U = X A_i S⁻¹, then M_ij = Σ_{(p,q)} (A_j)_{pq} U_{qp}.
                u.fill(0.0);
                for &(r, c, v) in &self.parts[i][pi].entries {
                    for q in 0..n {
                        let w = v * sb[(c, q)];
                        if w == 0.0 {
                            continue;
                        }
                        for p in 0..n {
                            u[(p, q)] += xb[(p, r)] * w;
                        }
                    }
                }
                for &(j, pj) in users {
                    if j < i {
                        continue;
                    }
                    let s: f64 = self.parts[j][pj]
                        .entries
                        .iter()
                        .map(|&(p, q, w)| w * u[(q, p)])
                        .sum();
                    mat[(i, j)] += s;
                }
            }
        }
        for i in 0..m {
            for j in 0..i {
                mat[(i, j)] = mat[(j, i)];
            }
        }
        mat
    }
}

fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// Largest α such that X + α dX stays PSD (∞ if every α works).
fn max_step(chol: &Cholesky<f64, nalgebra::Dyn>, d: &DMatrix<f64>) -> f64 {
    let l = chol.l();
    let Some(linv) = l.clone().try_inverse() else {
        return 0.0;
    };
    let w = sym(&(&linv * d * linv.transpose()));
    let lmin = SymmetricEigen::new(w).eigenvalues.min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

struct Saddle {
    k: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Saddle {
    fn new(m_mat: DMatrix<f64>, bcols: &DMatrix<f64>) -> Option<Saddle> {
        let m = m_mat.nrows();
        let nf = bcols.ncols();
        let mut k = DMatrix::zeros(m + nf, m + nf);
        k.view_mut((0, 0), (m, m)).copy_from(&m_mat);
        k.view_mut((0, m), (m, nf)).copy_from(bcols);
        k.view_mut((m, 0), (nf, m)).copy_from(&bcols.transpose());
        let scale = (0..m).map(|i| m_mat[(i, i)].abs()).fold(1e-300, f64::max);
        let mut reg = k.clone();
        for i in 0..m {
            reg[(i, i)] += 1e-15 * scale;
        }
        for i in m..m + nf {
            reg[(i, i)] -= 1e-13 * scale;
        }
        let lu = reg.lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(Saddle { k, lu })
    }

    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let mut sol = self.lu.solve(rhs)?;
        for _ in 0..3 {
            let r = rhs - &self.k * &sol;
            let d = self.lu.solve(&r)?;
            sol += d;
        }
        sol.iter().all(|v| v.is_finite()).then_some(sol)
    }
}

struct Iterate {
    x: Vec<DMatrix<f64>>,
    xf: DVector<f64>,
    y: DVector<f64>,
    s: Vec<DMatrix<f64>>,
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    dxf: DVector<f64>,
    dy: DVector<f64>,
    ds: Vec<DMatrix<f64>>,
}

/// Solve `p`. Linearly dependent equalities are removed first; the returned
/// dual vector is expanded back to the original constraint count.
pub fn solve(p: &SdpProblem, opts: &SolveOptions) -> SdpSolution {
    let pre = presolve(p);
    let m_full = p.num_constraints();
    if !pre.is_consistent() {
        return infeasible_by_presolve(p);
    }
    let mut sol = solve_reduced(&pre.problem, opts);
    sol.y = pre.expand_dual(&sol.y, m_full);
    sol.residuals = residuals(p, &sol.x, &sol.x_free, &sol.y, &sol.s);
    sol.dual_objective = p.rhs().iter().zip(&sol.y).map(|(b, y)| b * y).sum();
    sol.primal_objective = SdpProblem::apply(p.objective(), &sol.x, &sol.x_free);
    sol
}

fn infeasible_by_presolve(p: &SdpProblem) -> SdpSolution {
    let x: Vec<DMatrix<f64>> = p.psd_sizes().iter().map(|&n| DMatrix::zeros(n, n)).collect();
    let x_free = vec![0.0; p.nfree()];
    let y = vec![0.0; p.num_constraints()];
    let r = residuals(p, &x, &x_free, &y, &x);
    SdpSolution {
        status: SdpStatus::PrimalInfeasible,
        s: x.clone(),
        x,
        x_free,
        y,
        residuals: r,
        primal_objective: 0.0,
        dual_objective: 0.0,
        iterations: 0,
    }
}

fn solve_reduced(p: &SdpProblem, opts: &SolveOptions) -> SdpSolution {
    let cp = Compiled::new(p);
    let m = cp.m();
    let ntot: usize = cp.sizes.iter().sum();

    // Starting point: identity-scaled blocks sized from the data.
    let mut anorm: f64 = 0.0;
    let mut xi: f64 = 10.0f64.max((ntot as f64).sqrt());
    for (i, ps) in cp.parts.iter().enumerate() {
        let fro: f64 = ps
            .iter()
            .flat_map(|bp| bp.entries.iter())
            .map(|&(_, _, v)| v * v)
            .sum::<f64>()
            .sqrt();
        anorm = anorm.max(fro);
        if fro > 0.0 {
            xi = xi.max(ntot as f64 * (1.0 + cp.b[i].abs()) / (1.0 + fro));
        }
    }
    let cnorm = cp.c.iter().map(|c| c.norm()).fold(cp.c_free.norm(), f64::max);
    let eta = 10.0f64.max((ntot as f64).sqrt()).max(anorm).max(cnorm);
    let mut it = Iterate {
        x: cp.sizes.iter().map(|&n| DMatrix::identity(n, n) * xi).collect(),
        xf: DVector::zeros(cp.nfree),
        y: DVector::zeros(m),
        s: cp.sizes.iter().map(|&n| DMatrix::identity(n, n) * eta).collect(),
    };

    let bnorm = cp.b.amax();
    let mut status = SdpStatus::MaxIters;
    let mut best: Option<(f64, Iterate)> = None;
    let mut stalls = 0;
    let mut no_progress = 0;
    let mut best_infeas = f64::INFINITY;
    let mut ray_ratios = (f64::INFINITY, f64::INFINITY);
    let data_scale = 1.0 + bnorm + cnorm;
    let mut iters = 0;

    for k in 0..=opts.max_iters {
        iters = k;
        // Residuals of the current iterate.
        let ax = cp.op(&it.x) + &cp.free_cols * &it.xf;
        let rp = &cp.b - ax;
        let aty = cp.adj(&it.y);
        let rd: Vec<DMatrix<f64>> = cp
            .c
            .iter()
            .zip(&aty)
            .zip(&it.s)
            .map(|((c, a), s)| c - a - s)
            .collect();
        let rf = &cp.c_free - cp.free_cols.transpose() * &it.y;
        let pres = rp.amax();
        let dres = rd.iter().map(|r| r.amax()).fold(rf.amax(), f64::max);
        let pobj = inner(&cp.c, &it.x) + cp.c_free.dot(&it.xf);
        let dobj = cp.b.dot(&it.y);
        let gap = (pobj - dobj).abs() / (1.0 + dobj.abs());

        if pres <= opts.feas_tol && dres <= opts.feas_tol && gap <= opts.gap_tol {
            status = SdpStatus::Optimal;
            break;
        }
        let infeas = (pres / (1.0 + bnorm)).max(dres / (1.0 + cnorm));
        let merit = infeas.max(gap);
        // Early iterations of an infeasible start may trade gap for
        // feasibility, so either measure improving counts as progress.
        if infeas < 0.99 * best_infeas {
            best_infeas = infeas;
            no_progress = 0;
        }
        if best.as_ref().is_none_or(|(bm, _)| merit < *bm) {
            if best.as_ref().is_none_or(|(bm, _)| merit < 0.99 * *bm) {
                no_progress = 0;
            }
            best = Some((
                merit,
                Iterate {
                    x: it.x.clone(),
                    xf: it.xf.clone(),
                    y: it.y.clone(),
                    s: it.s.clone(),
                },
            ));
        } else {
            no_progress += 1;
        }

        // Farkas-type rays, normalized by the diverging objective. A dual
        // iterate with bᵀy → ∞ while Aᵀy + S stays bounded proves primal
        // infeasibility, and symmetrically for the primal side.
        ray_ratios = (f64::INFINITY, f64::INFINITY);
        if dobj > 0.0 {
            let ray = (&cp.c_free - &rf)
                .amax()
                .max(cp.c.iter().zip(&rd).map(|(c, r)| (c - r).amax()).fold(0.0, f64::max));
            ray_ratios.0 = ray / dobj;
            if dobj > 1e10 * ray.max(opts.feas_tol) {
                status = SdpStatus::PrimalInfeasible;
                break;
            }
        }
        if pobj < 0.0 {
            let ray = (&cp.b - &rp).amax();
            ray_ratios.1 = ray / -pobj;
            if -pobj > 1e10 * ray.max(opts.feas_tol) {
                status = SdpStatus::DualInfeasible;
                break;
            }
        }
        if no_progress >= 15 {
            status = SdpStatus::NumericalFailure;
            break;
        }
        if k == opts.max_iters {
            break;
        }

        // Factor the blocks.
        let mut chol_x = Vec::with_capacity(cp.sizes.len());
        let mut chol_s = Vec::with_capacity(cp.sizes.len());
        let mut sinv = Vec::with_capacity(cp.sizes.len());
        let mut ok = true;
        for (x, s) in it.x.iter().zip(&it.s) {
            match (Cholesky::new(x.clone()), Cholesky::new(s.clone())) {
                (Some(cx), Some(cs)) => {
                    sinv.push(sym(&cs.inverse()));
                    chol_x.push(cx);
                    chol_s.push(cs);
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            status = SdpStatus::NumericalFailure;
            break;
        }
        let mu = if ntot > 0 {
            inner(&it.x, &it.s) / ntot as f64
        } else {
            0.0
        };

        let Some(saddle) = Saddle::new(cp.schur(&it.x, &sinv), &cp.free_cols) else {
            status = SdpStatus::NumericalFailure;
            break;
        };

        // X Rd S⁻¹ is shared by predictor and corrector.
        let xrds: Vec<DMatrix<f64>> = it
            .x
            .iter()
            .zip(&rd)
            .zip(&sinv)
            .map(|((x, r), si)| x * r * si)
            .collect();
        let a_xrds = cp.op(&xrds);

        let direction = |rc: &[DMatrix<f64>]| -> Option<Direction> {
            // dX = Rc − sym(X dS S⁻¹) with dS = Rd − Aᵀdy.
            let h = &rp - cp.op(rc) + &a_xrds;
            let mut rhs = DVector::zeros(m + cp.nfree);
            rhs.rows_mut(0, m).copy_from(&h);
            rhs.rows_mut(m, cp.nfree).copy_from(&rf);
            let sol = saddle.solve(&rhs)?;
            let dy = sol.rows(0, m).into_owned();
            let dxf = sol.rows(m, cp.nfree).into_owned();
            let atdy = cp.adj(&dy);
            let mut dx = Vec::with_capacity(rc.len());
            let mut ds = Vec::with_capacity(rc.len());
            for b in 0..rc.len() {
                let dsb = &rd[b] - &atdy[b];
                let dxb = &rc[b] - sym(&(&it.x[b] * &dsb * &sinv[b]));
                dx.push(dxb);
                ds.push(dsb);
            }
            Some(Direction { dx, dxf, dy, ds })
        };

        let steps = |d: &Direction| -> (f64, f64) {
            let mut ap: f64 = f64::INFINITY;
            let mut ad: f64 = f64::INFINITY;
            for b in 0..d.dx.len() {
                ap = ap.min(max_step(&chol_x[b], &d.dx[b]));
                ad = ad.min(max_step(&chol_s[b], &d.ds[b]));
            }
            (ap, ad)
        };

        // Predictor.
        let rc_aff: Vec<DMatrix<f64>> = it.x.iter().map(|x| -x).collect();
        let Some(aff) = direction(&rc_aff) else {
            status = SdpStatus::NumericalFailure;
            break;
        };
        let (ap_aff, ad_aff) = steps(&aff);
        let (ap_aff, ad_aff) = (ap_aff.min(1.0), ad_aff.min(1.0));
        let sigma = if ntot > 0 && mu > 0.0 {
            let mut mu_aff = 0.0;
            for b in 0..cp.sizes.len() {
                let xa = &it.x[b] + &aff.dx[b] * ap_aff;
                let sa = &it.s[b] + &aff.ds[b] * ad_aff;
                mu_aff += xa.dot(&sa);
            }
            mu_aff /= ntot as f64;
            (mu_aff / mu).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };

        // Corrector.
        let rc: Vec<DMatrix<f64>> = (0..cp.sizes.len())
            .map(|b| {
                &sinv[b] * (sigma * mu) - &it.x[b] - sym(&(&aff.dx[b] * &aff.ds[b] * &sinv[b]))
            })
            .collect();
        let Some(dir) = direction(&rc) else {
            status = SdpStatus::NumericalFailure;
            break;
        };
        let (ap, ad) = steps(&dir);
        let gamma = 0.9 + 0.09 * ap_aff.min(ad_aff);
        let ap = (gamma * ap).min(1.0);
        let ad = (gamma * ad).min(1.0);

        for b in 0..cp.sizes.len() {
            it.x[b] += &dir.dx[b] * ap;
            it.s[b] += &dir.ds[b] * ad;
            it.x[b] = sym(&it.x[b]);
            it.s[b] = sym(&it.s[b]);
        }
        it.xf += &dir.dxf * ap;
        it.y += &dir.dy * ad;

        if ap.max(ad) < 1e-8 {
            stalls += 1;
            if stalls >= 3 {
                status = SdpStatus::NumericalFailure;
                break;
            }
        } else {
            stalls = 0;
        }
    }

    // A stalled run whose objective has run away along a near-ray is
    // classified as infeasible rather than as a numerical failure.
    if matches!(status, SdpStatus::MaxIters | SdpStatus::NumericalFailure) {
        let (p_inf, d_inf) = ray_ratios;
        let dobj = cp.b.dot(&it.y);
        let pobj = inner(&cp.c, &it.x) + cp.c_free.dot(&it.xf);
        if d_inf <= 1e-6 && -pobj > 1e5 * data_scale {
            status = SdpStatus::DualInfeasible;
        } else if p_inf <= 1e-6 && dobj > 1e5 * data_scale {
            status = SdpStatus::PrimalInfeasible;
        }
    }
    let fin = match (status, best) {
        (SdpStatus::MaxIters | SdpStatus::NumericalFailure, Some((_, b))) => b,
        _ => it,
    };
    let x_free: Vec<f64> = fin.xf.iter().copied().collect();
    let y: Vec<f64> = fin.y.iter().copied().collect();
    let r = residuals(p, &fin.x, &x_free, &y, &fin.s);
    SdpSolution {
        status,
        primal_objective: SdpProblem::apply(p.objective(), &fin.x, &x_free),
        dual_objective: p.rhs().iter().zip(&y).map(|(b, y)| b * y).sum(),
        x: fin.x,
        x_free,
        y,
        s: fin.s,
        residuals: r,
        iterations: iters,
    }
}

#[cfg(test)]
mod tests {
    use super::super::Entry;
    use super::*;

    fn two_by_two() -> SdpProblem {
        let mut p = SdpProblem::new(vec![2], 0);
        p.set_objective(vec![Entry::new(0, 0, 0, 0.5), Entry::new(0, 1, 1, 0.5)])
            .unwrap();
        p.add_constraint(vec![Entry::new(0, 0, 1, 0.5)], 1.0).unwrap();
        p.add_constraint(vec![Entry::new(0, 0, 0, 1.0), Entry::new(0, 1, 1, -1.0)], 0.0)
            .unwrap();
        p
    }

    #[test]
    fn two_by_two_threshold() {
        let sol = solve(&two_by_two(), &SolveOptions::default());
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.primal_objective - 1.0).abs() < 1e-7, "{}", sol.primal_objective);
        assert!(sol.residuals.gap <= 1e-8);
    }

    #[test]
    fn free_variable_form() {
        // Same problem with x as a free variable: [[x,1],[1,x]] = X.
        let mut p = SdpProblem::new(vec![2], 1);
        p.set_objective(vec![Entry::new(1, 0, 0, 1.0)]).unwrap();
        p.add_constraint(vec![Entry::new(0, 0, 0, 1.0), Entry::new(1, 0, 0, -1.0)], 0.0)
            .unwrap();
        p.add_constraint(vec![Entry::new(0, 1, 1, 1.0), Entry::new(1, 0, 0, -1.0)], 0.0)
            .unwrap();
        p.add_constraint(vec![Entry::new(0, 0, 1, 1.0)], 2.0).unwrap();
        let sol = solve(&p, &SolveOptions::default());
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.x_free[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn trace_minimization() {
        let n = 4;
        let mut p = SdpProblem::new(vec![n], 0);
        p.set_objective((0..n).map(|i| Entry::new(0, i, i, 1.0)).collect())
            .unwrap();
        p.add_constraint(vec![Entry::new(0, 0, 0, 1.0)], 2.0).unwrap();
        let sol = solve(&p, &SolveOptions::default());
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.primal_objective - 2.0).abs() < 1e-7);
        assert!((sol.x[0][(0, 0)] - 2.0).abs() < 1e-7);
        for i in 1..n {
            assert!(sol.x[0][(i, i)].abs() < 1e-7);
        }
    }

    #[test]
    fn infeasible_and_unbounded() {
        // X ⪰ 0 with X_00 = -1.
        let mut p = SdpProblem::new(vec![2], 0);
        p.add_constraint(vec![Entry::new(0, 0, 0, 1.0)], -1.0).unwrap();
        let sol = solve(&p, &SolveOptions::default());
        assert_eq!(sol.status, SdpStatus::PrimalInfeasible);

        // min t with t free and no constraint tying it.
        let mut p = SdpProblem::new(vec![1], 1);
        p.set_objective(vec![Entry::new(1, 0, 0, 1.0)]).unwrap();
        p.add_constraint(vec![Entry::new(0, 0, 0, 1.0), Entry::new(1, 0, 0, 1.0)], 1.0)
            .unwrap();
        let sol = solve(&p, &SolveOptions::default());
        assert_eq!(sol.status, SdpStatus::DualInfeasible);
    }

    #[test]
    fn deterministic() {
        let a = solve(&two_by_two(), &SolveOptions::default());
        let b = solve(&two_by_two(), &SolveOptions::default());
        assert_eq!(a, b);
    }
}
