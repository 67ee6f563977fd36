//! Ball-restricted bound, controller and ε-sweep for the forced Van der Pol
//! oscillator. Prints the sweep as CSV.

use ltac::bound::upper_bound_ball;
use ltac::sdp::SolveOptions;
use ltac::sim::{epsilon_sweep, SweepConfig};
use ltac::synthesis::{synthesize, SynthesisOptions};
use ltac::system::PolySystem;

fn main() {
    let opts = SolveOptions::default();
    let path = format!("{}/data/van_der_pol.sys", env!("CARGO_MANIFEST_DIR"));
    let sys = PolySystem::parse(&std::fs::read_to_string(path).unwrap()).unwrap();
    let cert = upper_bound_ball(&sys, 6, 4, sys.ball.unwrap(), &opts).unwrap();
    let r = synthesize(&sys, &cert, &SynthesisOptions::default(), &opts).unwrap();
    eprintln!("C0 = {:.4}, C1 = {:.4} ({}), u1 = {}", r.c0, r.c1, r.method, r.u1[0]);

    let mut cfg = SweepConfig::new(vec![2.0, 0.0], 200.0);
    cfg.pre_run = Some(100.0);
    let grid = [0.0, 0.01, 0.03, 0.1, 0.3, 1.0];
    let sweep = epsilon_sweep(&sys, &r.u1, r.c0, r.c1, &grid, &cfg).unwrap();
    print!("{}", sweep.to_csv());
    if let Some(best) = sweep.best() {
        eprintln!("lowest average {:.4} at eps = {}", best.phi, best.eps);
    }
}
