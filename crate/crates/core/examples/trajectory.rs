//! Closed-loop trajectory of the Hopf normal form under u = -0.5 ε x1,
//! written as CSV every 100 steps.

use ltac::poly::{PolyVector, Polynomial};
use ltac::sim::{integrate, long_time_average, DEFAULT_DT};
use ltac::system::PolySystem;

fn main() {
    let path = format!("{}/data/hopf.sys", env!("CARGO_MANIFEST_DIR"));
    let sys = PolySystem::parse(&std::fs::read_to_string(path).unwrap()).unwrap();
    let u1 = PolyVector::from_vec(2, vec![Polynomial::parse("-0.5*x1", 2).unwrap()]).unwrap();
    let traj = integrate(&sys, &u1, 0.2, &[0.1, 0.0], DEFAULT_DT, 40.0).unwrap();
    for (k, line) in traj.to_csv().lines().enumerate() {
        if k == 0 || (k - 1) % 100 == 0 {
            println!("{line}");
        }
    }
    let avg = long_time_average(&traj, 0.5).unwrap();
    eprintln!(
        "average cost {:.6} = phi0 {:.6} + penalty {:.6} (convergence {:.1e})",
        avg.phi, avg.phi0, avg.penalty, avg.convergence
    );
}
