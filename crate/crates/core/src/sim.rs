//! Closed-loop simulation with `u = εu1(x)`, long-time averages and sweeps
//! over ε.
//!
//! When the plant has a rate term `H(x)u̇`, the state derivative is found by
//! solving `(I − εH J)ẋ = f + εGu1` at every stage, with `J` the Jacobian of
//! `u1`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::poly::{PolyMatrix, PolyVector, Polynomial};
use crate::synthesis::SynthesisResult;
use crate::system::PolySystem;

pub const DEFAULT_DT: f64 = 0.001;
pub const DIVERGENCE_NORM: f64 = 1e6;
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("closed-loop matrix is singular at t = {t} (condition number {cond:.3e})")]
    Singular { t: f64, cond: f64 },
    #[error("trajectory diverged at t = {t}")]
    Diverged { t: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Numeric closed loop for one value of ε.
#[derive(Clone, Debug)]
pub struct Plant {
    n: usize,
    eps: f64,
    f: PolyVector,
    g: PolyMatrix,
    h: Option<PolyMatrix>,
    u1: PolyVector,
    jac: PolyMatrix,
    phi0: Polynomial,
    psi: PolyMatrix,
}

/// Quantities at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub xdot: Vec<f64>,
    pub u: Vec<f64>,
    pub phi0: f64,
    /// `uᵀΨu/ε`.
    pub penalty: f64,
}

impl Plant {
    pub fn new(sys: &PolySystem, u1: &PolyVector, eps: f64) -> Result<Self, SimError> {
        if u1.len() != sys.m() || (sys.m() > 0 && u1.nvars() != sys.n()) {
            return Err(SimError::Invalid(format!(
                "controller has {} inputs in {} variables, system needs {} in {}",
                u1.len(),
                u1.nvars(),
                sys.m(),
                sys.n()
            )));
        }
        if !eps.is_finite() || eps < 0.0 {
            return Err(SimError::Invalid(format!("eps must be finite and >= 0, got {eps}")));
        }
        Ok(Plant {
            n: sys.n(),
            eps,
            f: sys.f.clone(),
            g: sys.g.clone(),
            h: (sys.has_h() && eps > 0.0).then(|| sys.h.clone()),
            u1: u1.clone(),
            jac: u1.jacobian(),
            phi0: sys.phi0.clone(),
            psi: sys.psi.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn xdot(&self, x: &[f64], t: f64) -> Result<Vec<f64>, SimError> {
        Ok(self.sample(x, t)?.xdot)
    }

    pub fn sample(&self, x: &[f64], t: f64) -> Result<Sample, SimError> {
        let n = self.n;
        let m = self.u1.len();
        let u1: Vec<f64> = self.u1.iter().map(|p| p.eval(x)).collect();
        let u: Vec<f64> = u1.iter().map(|v| self.eps * v).collect();
        let mut rhs: Vec<f64> = self.f.iter().map(|p| p.eval(x)).collect();
        for (i, r) in rhs.iter_mut().enumerate() {
            for (j, uj) in u.iter().enumerate() {
                *r += self.g.get(i, j).eval(x) * uj;
            }
        }
        let mut quad = 0.0;
        for a in 0..m {
            for b in 0..m {
                quad += u1[a] * self.psi.get(a, b).eval(x) * u1[b];
            }
        }
        let xdot = match &self.h {
            None => rhs,
            Some(h) => {
                let hm = DMatrix::from_fn(n, m, |i, j| h.get(i, j).eval(x));
                let jm = DMatrix::from_fn(m, n, |i, j| self.jac.get(i, j).eval(x));
                let k = DMatrix::identity(n, n) - (hm * jm) * self.eps;
                let sv = k.clone().svd(false, false).singular_values;
                let smin = sv.min();
                let cond = if smin > 0.0 { sv.max() / smin } else { f64::INFINITY };
                if cond > MAX_CONDITION {
                    return Err(SimError::Singular { t, cond });
                }
                let sol = k
                    .lu()
                    .solve(&DVector::from_vec(rhs))
                    .ok_or(SimError::Singular { t, cond })?;
                sol.as_slice().to_vec()
            }
        };
        Ok(Sample {
            xdot,
            u,
            phi0: self.phi0.eval(x),
            penalty: self.eps * quad,
        })
    }
}

/// ẋ of the closed loop at `x`.
pub fn closed_loop_rhs(sys: &PolySystem, u1: &PolyVector, eps: f64, x: &[f64]) -> Result<Vec<f64>, SimError> {
    if x.len() != sys.n() || x.iter().any(|v| !v.is_finite()) {
        return Err(SimError::Invalid("state must be finite with n entries".into()));
    }
    Plant::new(sys, u1, eps)?.xdot(x, 0.0)
}

/// Uniformly sampled closed-loop trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub phi0: Vec<f64>,
    pub penalty: Vec<f64>,
    /// Set when the run stopped early because `‖x‖` exceeded
    /// [`DIVERGENCE_NORM`] or became non-finite.
    pub diverged: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().map_or(&[], Vec::as_slice)
    }

    /// Instantaneous cost `Φ0 + uᵀΨu/ε`.
    pub fn cost(&self, k: usize) -> f64 {
        self.phi0[k] + self.penalty[k]
    }

    /// Largest `xᵀx` from index `from` on.
    pub fn max_norm_sq(&self, from: usize) -> f64 {
        self.states[from..]
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t, x1..xn, u1..um, phi`.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.controls.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for i in 1..=n {
            write!(out, ",x{i}").unwrap();
        }
        for j in 1..=m {
            write!(out, ",u{j}").unwrap();
        }
        out.push_str(",phi\n");
        for k in 0..self.len() {
            write!(out, "{}", self.times[k]).unwrap();
            for v in self.states[k].iter().chain(&self.controls[k]) {
                write!(out, ",{v}").unwrap();
            }
            writeln!(out, ",{}", self.cost(k)).unwrap();
        }
        out
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Classical RK4 with fixed step `dt` up to time `t_end`.
pub fn integrate(
    sys: &PolySystem,
    u1: &PolyVector,
    eps: f64,
    x0: &[f64],
    dt: f64,
    t_end: f64,
) -> Result<Trajectory, SimError> {
    if dt.is_nan() || dt <= 0.0 || t_end.is_nan() || t_end <= dt {
        return Err(SimError::Invalid(format!("need dt > 0 and T > dt, got dt = {dt}, T = {t_end}")));
    }
    if x0.len() != sys.n() || x0.iter().any(|v| !v.is_finite()) {
        return Err(SimError::Invalid(format!("x0 must have {} finite entries", sys.n())));
    }
    let plant = Plant::new(sys, u1, eps)?;
    integrate_plant(&plant, x0, dt, t_end)
}

pub fn integrate_plant(plant: &Plant, x0: &[f64], dt: f64, t_end: f64) -> Result<Trajectory, SimError> {
    let steps = (t_end / dt).round() as usize;
    let n = plant.n();
    let mut traj = Trajectory {
        dt,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps + 1),
        phi0: Vec::with_capacity(steps + 1),
        penalty: Vec::with_capacity(steps + 1),
        diverged: false,
    };
    let mut x = x0.to_vec();
    let mut tmp = vec![0.0; n];
    for step in 0..=steps {
        let t = step as f64 * dt;
        let s = plant.sample(&x, t)?;
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.controls.push(s.u);
        traj.phi0.push(s.phi0);
        traj.penalty.push(s.penalty);
        if step == steps {
            break;
        }
        let k1 = s.xdot;
        let stage = |tmp: &mut Vec<f64>, k: &[f64], h: f64| {
            for i in 0..n {
                tmp[i] = x[i] + h * k[i];
            }
        };
        stage(&mut tmp, &k1, 0.5 * dt);
        let k2 = plant.xdot(&tmp, t + 0.5 * dt)?;
        stage(&mut tmp, &k2, 0.5 * dt);
        let k3 = plant.xdot(&tmp, t + 0.5 * dt)?;
        stage(&mut tmp, &k3, dt);
        let k4 = plant.xdot(&tmp, t + dt)?;
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let r = norm(&x);
        if !r.is_finite() || r > DIVERGENCE_NORM {
            traj.diverged = true;
            break;
        }
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Average {
    /// Average of `Φ0 + uᵀΨu/ε`.
    pub phi: f64,
    /// Average of `Φ0`.
    pub phi0: f64,
    /// Average of `uᵀΨu/ε`.
    pub penalty: f64,
    /// `|average over the last half of the window − average over the window|`.
    pub convergence: f64,
}

fn trapezoid(v: &[f64], dt: f64) -> f64 {
    if v.len() < 2 {
        return v.first().copied().unwrap_or(0.0);
    }
    let inner: f64 = v[1..v.len() - 1].iter().sum();
    let integral = dt * (inner + 0.5 * (v[0] + v[v.len() - 1]));
    integral / (dt * (v.len() - 1) as f64)
}

/// Time averages over the trajectory after dropping the first
/// `discard_fraction` of it.
pub fn long_time_average(traj: &Trajectory, discard_fraction: f64) -> Result<Average, SimError> {
    if traj.diverged {
        return Err(SimError::Diverged {
            t: traj.times.last().copied().unwrap_or(0.0),
        });
    }
    if !(0.0..1.0).contains(&discard_fraction) {
        return Err(SimError::Invalid(format!("discard fraction {discard_fraction} not in [0, 1)")));
    }
    let len = traj.len();
    let start = ((len - 1) as f64 * discard_fraction).round() as usize;
    if len - start < 3 {
        return Err(SimError::Invalid("trajectory too short to average".into()));
    }
    let costs: Vec<f64> = (start..len).map(|k| traj.cost(k)).collect();
    let phi = trapezoid(&costs, traj.dt);
    let phi0 = trapezoid(&traj.phi0[start..], traj.dt);
    let penalty = trapezoid(&traj.penalty[start..], traj.dt);
    let mid = (costs.len() - 1) / 2;
    let late = trapezoid(&costs[mid..], traj.dt);
    Ok(Average {
        phi,
        phi0,
        penalty,
        convergence: (late - phi).abs(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub x0: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    pub discard: f64,
    /// Run the uncontrolled system this long from `x0` first and start every
    /// sweep point from where it ends.
    pub pre_run: Option<f64>,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl SweepConfig {
    pub fn new(x0: Vec<f64>, t_end: f64) -> Self {
        SweepConfig {
            x0,
            t_end,
            dt: DEFAULT_DT,
            discard: 0.5,
            pre_run: None,
            jobs: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub phi: f64,
    pub phi0: f64,
    pub penalty: f64,
    /// `C0 + εC1`.
    pub bound_line: f64,
    pub convergence: f64,
    /// Largest `xᵀx` over the averaging window.
    pub max_norm_sq: f64,
    pub diverged: bool,
    /// Why the row has no averages (divergence or a singular closed loop).
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub c0: f64,
    pub c1: f64,
    pub x0: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Row with the smallest `Φ̄` among those that did not diverge.
    pub fn best(&self) -> Option<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| !r.diverged)
            .min_by(|a, b| a.phi.total_cmp(&b.phi))
    }

    /// CSV with columns `eps, phi, phi0, bound_line, diverged`; averages of
    /// diverged rows are written as `nan`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,phi,phi0,bound_line,diverged\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.eps,
                r.phi,
                r.phi0,
                r.bound_line,
                u8::from(r.diverged)
            )
            .unwrap();
        }
        out
    }
}

/// Final state of the uncontrolled system after time `t_end`.
pub fn settle(sys: &PolySystem, x0: &[f64], dt: f64, t_end: f64) -> Result<Vec<f64>, SimError> {
    let zero = PolyVector::zeros(sys.n(), sys.m());
    let traj = integrate(sys, &zero, 0.0, x0, dt, t_end)?;
    if traj.diverged {
        return Err(SimError::Diverged {
            t: *traj.times.last().unwrap(),
        });
    }
    Ok(traj.last_state().to_vec())
}

fn sweep_row(sys: &PolySystem, u1: &PolyVector, eps: f64, x0: &[f64], cfg: &SweepConfig, line: f64) -> SweepRow {
    let mut row = SweepRow {
        eps,
        phi: f64::NAN,
        phi0: f64::NAN,
        penalty: f64::NAN,
        bound_line: line,
        convergence: f64::NAN,
        max_norm_sq: f64::NAN,
        diverged: true,
        note: None,
    };
    let traj = match integrate(sys, u1, eps, x0, cfg.dt, cfg.t_end) {
        Ok(t) => t,
        Err(e) => {
            row.note = Some(e.to_string());
            return row;
        }
    };
    match long_time_average(&traj, cfg.discard) {
        Ok(avg) => {
            row.phi = avg.phi;
            row.phi0 = avg.phi0;
            row.penalty = avg.penalty;
            row.convergence = avg.convergence;
            let start = ((traj.len() - 1) as f64 * cfg.discard).round() as usize;
            row.max_norm_sq = traj.max_norm_sq(start);
            row.diverged = false;
        }
        Err(e) => row.note = Some(e.to_string()),
    }
    row
}

/// Independent closed-loop runs for each ε of an ascending positive grid.
pub fn epsilon_sweep(
    sys: &PolySystem,
    u1: &PolyVector,
    c0: f64,
    c1: f64,
    grid: &[f64],
    cfg: &SweepConfig,
) -> Result<SweepResult, SimError> {
    if grid.is_empty() {
        return Err(SimError::Invalid("empty epsilon grid".into()));
    }
    if grid.iter().any(|&e| !e.is_finite() || e < 0.0) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SimError::Invalid("epsilon grid must be nonnegative and strictly ascending".into()));
    }
    if cfg.x0.len() != sys.n() {
        return Err(SimError::Invalid(format!("x0 must have {} entries", sys.n())));
    }
    Plant::new(sys, u1, 0.0)?;
    let x0 = match cfg.pre_run {
        Some(t) => settle(sys, &cfg.x0, cfg.dt, t)?,
        None => cfg.x0.clone(),
    };
    let run = || -> Vec<SweepRow> {
        grid.par_iter()
            .map(|&eps| sweep_row(sys, u1, eps, &x0, cfg, c0 + eps * c1))
            .collect()
    };
    let rows = match cfg.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| SimError::Invalid(e.to_string()))?
            .install(run),
        None => run(),
    };
    Ok(SweepResult { c0, c1, x0, rows })
}

/// Sweep with the controller and bound coefficients of a synthesis result.
pub fn sweep_synthesis(
    sys: &PolySystem,
    res: &SynthesisResult,
    grid: &[f64],
    cfg: &SweepConfig,
) -> Result<SweepResult, SimError> {
    epsilon_sweep(sys, &res.u1, res.c0, res.c1, grid, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::PolyMatrix;

    fn b1() -> PolySystem {
        PolySystem::new(
            PolyVector::from_vec(1, vec![Polynomial::parse("x1 - x1^3", 1).unwrap()]).unwrap(),
            PolyMatrix::identity(1, 1),
            Polynomial::parse("x1^2", 1).unwrap(),
        )
        .unwrap()
    }

    fn lin(k: f64) -> PolyVector {
        PolyVector::from_vec(1, vec![Polynomial::var(1, 0).scale(k)]).unwrap()
    }

    #[test]
    fn rhs_cases() {
        let sys = b1();
        assert_eq!(closed_loop_rhs(&sys, &lin(-0.5), 0.0, &[2.0]).unwrap(), vec![2.0 - 8.0]);
        let v = closed_loop_rhs(&sys, &lin(-0.5), 0.2, &[2.0]).unwrap()[0];
        assert!((v - (2.0 - 8.0 - 0.2)).abs() < 1e-14);

        let h = PolyMatrix::from_rows(1, vec![vec![Polynomial::constant(1, 0.7)]]).unwrap();
        let sys_h = b1().with_h(h).unwrap();
        let (eps, k, x) = (0.3, 2.0, 0.8);
        let v = closed_loop_rhs(&sys_h, &lin(k), eps, &[x]).unwrap()[0];
        let expect = (x - x * x * x + eps * k * x) / (1.0 - eps * 0.7 * k);
        assert!((v - expect).abs() < 1e-14);
    }

    #[test]
    fn singular_closed_loop_aborts() {
        let h = PolyMatrix::from_rows(1, vec![vec![Polynomial::constant(1, 1.0)]]).unwrap();
        let sys = b1().with_h(h).unwrap();
        let r = integrate(&sys, &lin(2.0), 0.5, &[1.0], 0.01, 1.0);
        assert!(matches!(r, Err(SimError::Singular { .. })), "{r:?}");
    }

    #[test]
    fn uncontrolled_flow_settles() {
        let sys = b1();
        let traj = integrate(&sys, &lin(0.0), 0.0, &[2.0], DEFAULT_DT, 20.0).unwrap();
        assert!((traj.last_state()[0] - 1.0).abs() < 1e-6);
        assert_eq!(traj.len(), 20001);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let sys = PolySystem::autonomous(
            PolyVector::from_vec(1, vec![Polynomial::parse("-x1", 1).unwrap()]).unwrap(),
            Polynomial::zero(1),
        )
        .unwrap();
        let zero = PolyVector::zeros(1, 0);
        let err = |dt: f64| {
            let t = integrate(&sys, &zero, 0.0, &[1.0], dt, 1.0).unwrap();
            (t.last_state()[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 1.5, "{ratio}");
    }

    #[test]
    fn averages() {
        let sys = b1();
        let traj = integrate(&sys, &lin(0.0), 0.0, &[1.0], 0.01, 10.0).unwrap();
        let avg = long_time_average(&traj, 0.5).unwrap();
        assert_eq!(avg.phi, 1.0);
        assert_eq!(avg.convergence, 0.0);

        let traj = integrate(&sys, &lin(-0.5), 0.1, &[2.0], DEFAULT_DT, 200.0).unwrap();
        let avg = long_time_average(&traj, 0.5).unwrap();
        assert!((avg.phi - 0.95 * 1.025).abs() < 1e-4, "{}", avg.phi);
        assert!((avg.phi - avg.phi0 - avg.penalty).abs() < 1e-10);
    }

    #[test]
    fn divergence_is_flagged() {
        let sys = PolySystem::autonomous(
            PolyVector::from_vec(1, vec![Polynomial::parse("x1^2", 1).unwrap()]).unwrap(),
            Polynomial::zero(1),
        )
        .unwrap();
        let traj = integrate(&sys, &PolyVector::zeros(1, 0), 0.0, &[1.0], 0.01, 5.0).unwrap();
        assert!(traj.diverged);
        assert!(traj.times.last().unwrap() < &1.1);
        assert!(long_time_average(&traj, 0.5).is_err());
    }

    #[test]
    fn sweep_rows_and_csv() {
        let sys = b1();
        let grid = [0.1, 0.2];
        let cfg = SweepConfig::new(vec![2.0], 50.0);
        let res = epsilon_sweep(&sys, &lin(-0.5), 1.0, -0.25, &grid, &cfg).unwrap();
        for r in &res.rows {
            let exact = 1.0 - r.eps / 4.0 - r.eps * r.eps / 8.0;
            assert!((r.phi - exact).abs() < 1e-6, "{} {}", r.eps, r.phi);
            assert!(r.phi >= r.phi0);
        }
        assert_eq!(res.best().unwrap().eps, 0.2);
        let csv = res.to_csv();
        assert!(csv.starts_with("eps,phi,phi0,bound_line,diverged\n0.1,"));
        assert!(epsilon_sweep(&sys, &lin(-0.5), 1.0, 0.0, &[], &cfg).is_err());
        assert!(epsilon_sweep(&sys, &lin(-0.5), 1.0, 0.0, &[0.2, 0.1], &cfg).is_err());
    }
}
