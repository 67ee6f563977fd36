//! Upper and lower bounds on the long-time average of x² for
//! ẋ = x − x³, and a ball-restricted bound for Van der Pol.

use ltac::bound::{lower_bound, upper_bound, upper_bound_ball};
use ltac::sdp::SolveOptions;
use ltac::system::PolySystem;

fn load(name: &str) -> PolySystem {
    let path = format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"));
    PolySystem::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn main() {
    let opts = SolveOptions::default();
    let b1 = load("b1.sys");
    let up = upper_bound(&b1, 2, &opts).unwrap();
    let lo = lower_bound(&b1, 2, &opts).unwrap();
    println!("pitchfork: {:.6} <= average x^2 <= {:.6}", lo.c, up.c);
    println!("  V = {}", up.v);
    println!("  replay residual {:.1e}", up.replay(&b1.f, &b1.phi0).unwrap());

    let vdp = load("van_der_pol.sys");
    let beta = vdp.ball.unwrap();
    for dv in [4, 6, 8] {
        let cert = upper_bound_ball(&vdp, dv, 4, beta, &opts).unwrap();
        println!("Van der Pol, ball xᵀx <= {}, deg V = {dv}: C = {:.4}", 2.0 * beta, cert.c);
    }
}
