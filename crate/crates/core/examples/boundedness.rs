//! Smallest ball that provably absorbs every trajectory.

use ltac::bound::{certify_bounded, BoundednessMultiplier};
use ltac::poly::{PolyVector, Polynomial};
use ltac::sdp::SolveOptions;

fn main() {
    let opts = SolveOptions::default();
    let f = PolyVector::from_vec(1, vec![Polynomial::parse("x1 - x1^3", 1).unwrap()]).unwrap();
    for mult in [BoundednessMultiplier::Unit, BoundednessMultiplier::Sos(0), BoundednessMultiplier::Sos(2)] {
        let b = certify_bounded(&f, 100.0, mult, 1e-5, &opts).unwrap();
        println!("{mult:?}: beta = {:.5} (S = {}, {} steps)", b.beta, b.multiplier, b.steps);
    }

    let f = PolyVector::from_vec(1, vec![Polynomial::parse("x1", 1).unwrap()]).unwrap();
    match certify_bounded(&f, 100.0, BoundednessMultiplier::Unit, 1e-5, &opts) {
        Ok(b) => println!("x' = x: unexpectedly bounded at {}", b.beta),
        Err(e) => println!("x' = x: {e}"),
    }
}
