//! min x subject to [[x, 1], [1, x]] ⪰ 0, solved directly and written in
//! SDPA sparse format.

use ltac::sdp::{export_sdpa, import_sdpa, solve, Entry, SdpProblem, SolveOptions};

fn main() {
    // X = [[x, 1], [1, x]] with x in the free block.
    let mut p = SdpProblem::new(vec![2], 1);
    let free = p.free_block();
    p.set_objective(vec![Entry::new(free, 0, 0, 1.0)]).unwrap();
    p.add_constraint(vec![Entry::new(0, 0, 0, 1.0), Entry::new(free, 0, 0, -1.0)], 0.0)
        .unwrap();
    p.add_constraint(vec![Entry::new(0, 1, 1, 1.0), Entry::new(free, 0, 0, -1.0)], 0.0)
        .unwrap();
    p.add_constraint(vec![Entry::new(0, 0, 1, 1.0)], 2.0).unwrap();

    let sol = solve(&p, &SolveOptions::default());
    println!(
        "status {}, x = {:.9}, {} iterations, gap {:.1e}",
        sol.status, sol.x_free[0], sol.iterations, sol.residuals.gap
    );
    let text = export_sdpa(&p);
    print!("{text}");
    assert_eq!(export_sdpa(&import_sdpa(&text).unwrap()), text);
}
