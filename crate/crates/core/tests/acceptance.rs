//! Acceptance checks. One line per criterion; exits nonzero if any fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ltac::bound::{certify_bounded, upper_bound, upper_bound_ball, BoundSpec, BoundednessMultiplier};
use ltac::poly::{PolyMatrix, PolyVector, Polynomial};
use ltac::sdp::{export_sdpa, import_sdpa, solve, Entry, SdpProblem, SdpStatus, SolveOptions};
use ltac::sim::{epsilon_sweep, integrate, long_time_average, SweepConfig, DEFAULT_DT};
use ltac::sos::{compile, PolyExpr, SosError, SosProgram};
use ltac::synthesis::{refine_bound, synthesize, Degrees, SynthesisOptions};
use ltac::system::PolySystem;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn load(name: &str) -> PolySystem {
    PolySystem::parse(&std::fs::read_to_string(data(name)).unwrap()).unwrap()
}

fn b1() -> PolySystem {
    load("b1.sys")
}

fn opts() -> SolveOptions {
    SolveOptions::default()
}

fn b1_bound() -> Outcome {
    let sys = b1();
    let t = Instant::now();
    let cert = match upper_bound(&sys, 2, &opts()) {
        Ok(c) => c,
        Err(e) => return check(false, e.to_string()),
    };
    let elapsed = t.elapsed();
    let replay = cert.replay(&sys.f, &sys.phi0).unwrap_or(f64::INFINITY);
    check(
        (cert.c - 1.0).abs() <= 1e-3 && replay <= 1e-6 && elapsed < Duration::from_secs(1),
        format!("C0 = {:.6}, replay residual {replay:.2e}, {elapsed:.2?}", cert.c),
    )
}

fn b1_synthesis() -> Outcome {
    let sys = b1();
    let t = Instant::now();
    let cert = upper_bound(&sys, 2, &opts()).unwrap();
    let o = SynthesisOptions {
        degrees: Degrees {
            u1: 1,
            ..Default::default()
        },
        ..Default::default()
    };
    let r = match synthesize(&sys, &cert, &o, &opts()) {
        Ok(r) => r,
        Err(e) => return check(false, e.to_string()),
    };
    let elapsed = t.elapsed();
    let k = r.u1[0].coeff(&ltac::poly::Monomial::var(1, 0));
    check(
        (r.c1 + 0.25).abs() <= 5e-3 && (k + 0.5).abs() <= 0.02 && elapsed < Duration::from_secs(10),
        format!("C1 = {:.5}, u1 = {k:.5}·x, {elapsed:.2?}", r.c1),
    )
}

fn b1_closed_loop() -> Outcome {
    let sys = b1();
    let cert = upper_bound(&sys, 2, &opts()).unwrap();
    let r = synthesize(&sys, &cert, &SynthesisOptions::default(), &opts()).unwrap();
    let grid: Vec<f64> = (1..=8).map(|i| 0.05 * i as f64).collect();
    let cfg = SweepConfig::new(vec![2.0], 100.0);
    let sweep = epsilon_sweep(&sys, &r.u1, r.c0, r.c1, &grid, &cfg).unwrap();
    let mut worst_exact: f64 = 0.0;
    let mut worst_line = f64::NEG_INFINITY;
    let mut worst_refined = f64::NEG_INFINITY;
    for row in &sweep.rows {
        let eps = row.eps;
        let exact = 1.0 - eps / 4.0 - eps * eps / 8.0;
        worst_exact = worst_exact.max((row.phi - exact).abs());
        worst_line = worst_line.max(row.phi - (r.c0 + 0.5 * eps * r.c1));
        match refine_bound(&sys, &r.u1, eps, BoundSpec::upper(4), &opts()) {
            Ok(rb) => worst_refined = worst_refined.max(row.phi - rb.c),
            Err(e) => return check(false, format!("refine_bound at eps = {eps}: {e}")),
        }
    }
    check(
        worst_exact <= 1e-3 && worst_line <= 0.0 && worst_refined <= 1e-4,
        format!(
            "max |phi - exact| {worst_exact:.2e}, max phi - (C0 + eps C1/2) {worst_line:.2e}, max phi - C(eps) {worst_refined:.2e}"
        ),
    )
}

fn boundedness() -> Outcome {
    let f = |s: &str| PolyVector::from_vec(1, vec![Polynomial::parse(s, 1).unwrap()]).unwrap();
    let good = certify_bounded(&f("-x1^3 + x1"), 100.0, BoundednessMultiplier::Unit, 1e-4, &opts());
    let bad = certify_bounded(&f("x1"), 100.0, BoundednessMultiplier::Unit, 1e-4, &opts());
    let beta = good.as_ref().map(|b| b.beta).unwrap_or(f64::NAN);
    check(
        (beta - 0.5625).abs() <= 0.01 && bad.is_err(),
        format!("beta = {beta:.5}, f = x rejected: {}", bad.is_err()),
    )
}

fn sos_verdict(s: &str, n: usize) -> Result<bool, SosError> {
    let p = Polynomial::parse(s, n).unwrap();
    let mut prog = SosProgram::new(n);
    prog.add_sos("p", PolyExpr::from_poly(&p))?;
    match prog.solve(&opts()) {
        Ok(_) => Ok(true),
        Err(SosError::Infeasible { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

fn sos_corpus() -> Outcome {
    let feasible = [
        ("x1^2 + 2*x1 + 1", 1),
        ("(x1 + 1)^2 + (x2 - 1)^2", 2),
        ("(x1 + x2 + 1)^2", 2),
        ("(x1^2 + 1)^2", 1),
        ("(x1 + 1)^2*(x2 + 1)^2 + 1", 2),
        ("(x1*x2 + x3 + 1)^2 + (x1 - x3)^2", 3),
        ("x1^4 + x2^4 + 1", 2),
    ];
    let infeasible = [("-x1^2", 1), ("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", 2)];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = Vec::new();
    for (s, n) in feasible {
        match sos_verdict(s, n) {
            Ok(true) => {
                let p = Polynomial::parse(s, n).unwrap();
                for _ in 0..1000 {
                    let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
                    if p.eval(&x) < -1e-9 {
                        failures.push(format!("{s} negative at {x:?}"));
                        break;
                    }
                }
            }
            other => failures.push(format!("{s}: {other:?}")),
        }
    }
    for (s, n) in infeasible {
        if !matches!(sos_verdict(s, n), Ok(false)) {
            failures.push(format!("{s} not rejected"));
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} feasible sampled at 1000 points, {} rejected", feasible.len(), infeasible.len())
        } else {
            failures.join("; ")
        },
    )
}

fn threshold_sdp() -> SdpProblem {
    let mut p = SdpProblem::new(vec![2], 1);
    p.set_objective(vec![Entry::new(1, 0, 0, 1.0)]).unwrap();
    p.add_constraint(vec![Entry::new(0, 0, 0, 1.0), Entry::new(1, 0, 0, -1.0)], 0.0)
        .unwrap();
    p.add_constraint(vec![Entry::new(0, 1, 1, 1.0), Entry::new(1, 0, 0, -1.0)], 0.0)
        .unwrap();
    p.add_constraint(vec![Entry::new(0, 0, 1, 1.0)], 2.0).unwrap();
    p
}

fn sdp_corpus() -> Outcome {
    let mut problems = vec![threshold_sdp()];
    let sys = b1();
    for dv in [2, 4] {
        let prog = ltac::bound::BoundProgram::new(&sys.f, &sys.phi0, BoundSpec::upper(dv)).unwrap();
        problems.push(compile(&prog.program).unwrap().sdp);
    }
    let vdp = load("van_der_pol.sys");
    let prog = ltac::bound::BoundProgram::new(&vdp.f, &vdp.phi0, BoundSpec::upper(4).in_ball(12.5, 2)).unwrap();
    problems.push(compile(&prog.program).unwrap().sdp);

    let first = solve(&problems[0], &opts());
    let x = first.x_free[0];
    let mut worst_gap: f64 = 0.0;
    let mut round_trip = true;
    for p in &problems {
        let sol = solve(p, &opts());
        if sol.status == SdpStatus::Optimal {
            worst_gap = worst_gap.max(sol.residuals.gap);
        }
        let text = export_sdpa(p);
        round_trip &= import_sdpa(&text).map(|q| export_sdpa(&q) == text).unwrap_or(false);
    }
    check(
        (x - 1.0).abs() <= 1e-7 && worst_gap <= 1e-8 && round_trip,
        format!("x = {x:.9}, worst optimal gap {worst_gap:.2e}, SDPA round trip {round_trip}"),
    )
}

fn van_der_pol() -> Outcome {
    let t = Instant::now();
    let sys = load("van_der_pol.sys");
    let beta = sys.ball.unwrap();
    let c4 = upper_bound_ball(&sys, 4, 4, beta, &opts());
    let c6 = upper_bound_ball(&sys, 6, 4, beta, &opts());
    let (c4, c6) = match (c4, c6) {
        (Ok(a), Ok(b)) => (a, b),
        (a, b) => return check(false, format!("bound failed: {:?} {:?}", a.err(), b.err())),
    };
    let r = match synthesize(&sys, &c6, &SynthesisOptions::default(), &opts()) {
        Ok(r) => r,
        Err(e) => return check(false, e.to_string()),
    };
    let mut cfg = SweepConfig::new(vec![2.0, 0.0], 200.0);
    cfg.pre_run = Some(100.0);
    let grid = [0.0, 1e-3, 3e-3, 1e-2, 3e-2];
    let sweep = epsilon_sweep(&sys, &r.u1, r.c0, r.c1, &grid, &cfg).unwrap();
    let phi00 = sweep.rows[0].phi0;
    let decreases = sweep.rows[1].phi < sweep.rows[0].phi;
    let in_ball = sweep.rows.iter().all(|row| row.max_norm_sq <= 2.0 * beta);
    let elapsed = t.elapsed();
    check(
        c6.c >= phi00
            && c6.c <= c4.c + 1e-6
            && r.c1 < 0.0
            && decreases
            && in_ball
            && elapsed < Duration::from_secs(300),
        format!(
            "C0(4) = {:.4}, C0(6) = {:.4}, simulated phi0 = {phi00:.4}, C1 = {:.4} ({}), phi({}) - phi(0) = {:.3e}, {elapsed:.2?}",
            c4.c,
            c6.c,
            r.c1,
            r.method,
            grid[1],
            sweep.rows[1].phi - sweep.rows[0].phi
        ),
    )
}

fn penalty_and_determinism() -> Outcome {
    let hopf = load("hopf.sys");
    let cert = upper_bound(&hopf, 4, &opts()).unwrap();
    let r = synthesize(&hopf, &cert, &SynthesisOptions::default(), &opts()).unwrap();
    let grid = [0.01, 0.05, 0.1, 0.3];
    let cfg = SweepConfig::new(vec![0.5, 0.0], 50.0);
    let a = epsilon_sweep(&hopf, &r.u1, r.c0, r.c1, &grid, &cfg).unwrap();
    let mut par = cfg.clone();
    par.jobs = Some(1);
    let b = epsilon_sweep(&hopf, &r.u1, r.c0, r.c1, &grid, &par).unwrap();
    let worst = a
        .rows
        .iter()
        .map(|row| (row.phi - row.phi0 - row.penalty).abs())
        .fold(0.0, f64::max);

    // The identity on a plant with a state-dependent control weight and a rate term.
    let psi = PolyMatrix::from_rows(1, vec![vec![Polynomial::parse("1 + x1^2", 1).unwrap()]]).unwrap();
    let h = PolyMatrix::from_rows(1, vec![vec![Polynomial::constant(1, 0.3)]]).unwrap();
    let sys = b1().with_psi(psi).unwrap().with_h(h).unwrap();
    let u1 = PolyVector::from_vec(1, vec![Polynomial::parse("-0.5*x1", 1).unwrap()]).unwrap();
    let traj = integrate(&sys, &u1, 0.2, &[2.0], DEFAULT_DT, 50.0).unwrap();
    let avg = long_time_average(&traj, 0.5).unwrap();
    let worst = worst.max((avg.phi - avg.phi0 - avg.penalty).abs());

    let same = a.to_csv() == b.to_csv() && a == b;
    check(
        worst <= 1e-10 && same,
        format!("max |phi - phi0 - penalty| {worst:.2e}, repeated sweeps identical: {same}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("B1 bound", b1_bound),
        ("B1 synthesis", b1_synthesis),
        ("B1 closed loop", b1_closed_loop),
        ("boundedness certificate", boundedness),
        ("SOS checker corpus", sos_corpus),
        ("SDP unit corpus", sdp_corpus),
        ("Van der Pol pipeline", van_der_pol),
        ("penalty identity and determinism", penalty_and_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {} [{}] {name}: {} ({:.2?})",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
