//! Full initialization of the unbalanced 9-bus system with and without the
//! preconditioner.

use std::time::Instant;

use emt_init::netlist::{parse_system, WSCC9_UNBALANCED};
use emt_init::pipeline::{initialize, InitConfig};
use emt_init::solver::Preconditioning;

fn main() {
    let k: f64 = std::env::args()
        .nth(1)
        .map_or(0.1, |s| s.parse().expect("k"));
    let mut spec = parse_system(WSCC9_UNBALANCED).unwrap();
    spec.set_unbalance(k).unwrap();
    for precondition in [Preconditioning::Off, Preconditioning::Broyden] {
        let mut solver = spec.solver.clone();
        solver.precondition = precondition;
        let cfg = InitConfig {
            solver: Some(solver),
            ..InitConfig::default()
        };
        let start = Instant::now();
        let out = initialize(&spec, &cfg).unwrap();
        println!("{precondition:?} ({:.2} s)", start.elapsed().as_secs_f64());
        out.stats.write_convergence_csv(std::io::stdout()).unwrap();
    }
}
