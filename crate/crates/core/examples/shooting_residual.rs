//! Shooting residual at the power-flow guess, largest entries by name.

use emt_init::netlist::{parse_system, WSCC9_UNBALANCED};
use emt_init::pipeline::{prepare, InitConfig};

fn main() {
    let mut spec = parse_system(WSCC9_UNBALANCED).unwrap();
    spec.set_unbalance(0.1).unwrap();
    let prep = prepare(&spec, &InitConfig::default()).unwrap();
    let report = prep.problem.evaluate(&prep.x0).unwrap();
    println!("unknowns {}", prep.problem.dim());
    println!("‖F‖ {:.4e}", report.norm);
    println!("  periodic part    {:.4e}", report.periodic_norm);
    println!("  initial value    {:.4e}", report.initial_norm);
    println!("  power flow part  {:.4e}", report.power_flow_norm);
    let names = &prep.problem.layout.residual_names;
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| report.values[b].abs().total_cmp(&report.values[a].abs()));
    for &i in order.iter().take(8) {
        println!("  {:<16} {:+.3e}", names[i], report.values[i]);
    }
}
