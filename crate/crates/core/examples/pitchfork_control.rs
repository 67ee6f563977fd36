//! Full loop on ẋ = x − x³ + u with cost x² + u²/ε: bound, first-order
//! controller, refined bound for the closed loop and simulated averages.

use ltac::bound::{upper_bound, BoundSpec};
use ltac::sdp::SolveOptions;
use ltac::sim::{epsilon_sweep, SweepConfig};
use ltac::synthesis::{refine_bound, synthesize, SynthesisOptions};
use ltac::system::PolySystem;

fn main() {
    let opts = SolveOptions::default();
    let path = format!("{}/data/b1.sys", env!("CARGO_MANIFEST_DIR"));
    let sys = PolySystem::parse(&std::fs::read_to_string(path).unwrap()).unwrap();
    let cert = upper_bound(&sys, 2, &opts).unwrap();
    let r = synthesize(&sys, &cert, &SynthesisOptions::default(), &opts).unwrap();
    println!("C0 = {:.5}, C1 = {:.5}, u1 = {}", r.c0, r.c1, r.u1[0]);
    println!("lifted certificate residual {:.1e}", r.replay(&sys, &cert).unwrap());

    let grid = [0.05, 0.1, 0.2, 0.4];
    let sweep = epsilon_sweep(&sys, &r.u1, r.c0, r.c1, &grid, &SweepConfig::new(vec![2.0], 100.0)).unwrap();
    println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "eps", "phi", "C(eps)", "C0+eps*C1", "exact");
    for row in &sweep.rows {
        let refined = refine_bound(&sys, &r.u1, row.eps, BoundSpec::upper(4), &opts).unwrap();
        let exact = 1.0 - row.eps / 4.0 - row.eps * row.eps / 8.0;
        println!(
            "{:>6} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
            row.eps, row.phi, refined.c, row.bound_line, exact
        );
    }
}
