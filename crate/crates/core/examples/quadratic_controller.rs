//! Read a ten-state quadratic controller given as typeset k and M tables and
//! evaluate it.

use ltac::controller::Controller;

fn main() {
    let path = format!("{}/data/wake_quadratic.ctl", env!("CARGO_MANIFEST_DIR"));
    let ctl = Controller::parse(&std::fs::read_to_string(path).unwrap()).unwrap();
    let law = &ctl.laws[0];
    println!("{} states, |k| = {:.4}", ctl.nvars(), law.k.norm());
    let eig = law.m.clone().symmetric_eigen().eigenvalues;
    println!("eigenvalues of M: {:.4}", eig.transpose());
    let a: Vec<f64> = (0..ctl.nvars()).map(|i| if i < 2 { 1.0 } else { 0.0 }).collect();
    println!("u(a1 = a2 = 1) = {:.4}", law.eval(&a));
    println!("u = {}", law.to_polynomial());
}
