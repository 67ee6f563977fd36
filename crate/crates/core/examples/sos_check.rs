//! Decide whether a few polynomials are sums of squares and print the Gram
//! matrix when they are.

use ltac::poly::Polynomial;
use ltac::sdp::SolveOptions;
use ltac::sos::{PolyExpr, SosError, SosProgram};

fn main() {
    let cases = [
        ("x1^2 + 2*x1 + 1", 1),
        ("x1^4 - 2*x1^2*x2 + x2^2 + x2^4", 2),
        ("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", 2),
    ];
    for (text, n) in cases {
        let p = Polynomial::parse(text, n).unwrap();
        let mut prog = SosProgram::new(n);
        prog.add_sos("p", PolyExpr::from_poly(&p)).unwrap();
        match prog.solve(&SolveOptions::default()) {
            Ok(cert) => {
                let g = &cert.grams[0];
                println!("{text}: SOS (residual {:.1e}, min eig {:.1e})", g.residual, g.min_eig);
                for b in &g.blocks {
                    let basis: Vec<String> =
                        b.basis.iter().map(|m| Polynomial::term(m.clone(), 1.0).to_string()).collect();
                    println!("  basis [{}]", basis.join(", "));
                    println!("{:.4}", b.q);
                }
            }
            Err(SosError::Infeasible { .. }) => println!("{text}: not SOS"),
            Err(e) => println!("{text}: {e}"),
        }
    }
}
