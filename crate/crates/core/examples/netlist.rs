//! Parse the bundled 9-bus system, validate it and count equations.

use emt_init::netlist::{equation_balance, parse_system, validate, write_system, WSCC9_UNBALANCED};

fn main() {
    let spec = parse_system(WSCC9_UNBALANCED).expect("bundled system parses");
    let diags = validate(&spec);
    println!(
        "{} buses, {} branches, {} generators, {} motors, {} loads",
        spec.buses.len(),
        spec.branches.len(),
        spec.generators.len(),
        spec.motors.len(),
        spec.loads.len()
    );
    println!("diagnostics: {}", diags.len());
    let bal = equation_balance(&spec);
    println!(
        "power-flow residuals {} / free unknowns {}",
        bal.residuals, bal.free
    );

    // the writer is the parser's inverse
    let again = parse_system(&write_system(&spec)).expect("round trip");
    assert_eq!(again, spec);
    println!("round trip ok");
}
