//! Balanced power flow and its three-phase refinement at k = 0.1.

use emt_init::guess::{power_flow, PowerFlowOptions, Refinement};
use emt_init::netlist::{parse_system, WSCC9_UNBALANCED};
use emt_init::phasor::sequence_components;

fn main() {
    let mut spec = parse_system(WSCC9_UNBALANCED).unwrap();
    spec.set_unbalance(0.1).unwrap();
    for refine in [
        Refinement::Off,
        Refinement::Sweep,
        Refinement::ConstantPower,
    ] {
        let opts = PowerFlowOptions {
            refine,
            ..PowerFlowOptions::default()
        };
        let sol = power_flow(&spec, &opts).unwrap();
        println!("{refine:?}: {} iterations", sol.iterations);
        for (bus, v) in spec.buses.iter().zip(&sol.phase_v) {
            let [z, p, n] = sequence_components(v);
            println!(
                "  bus {:>2}  |Va| {:.4} |Vb| {:.4} |Vc| {:.4}  V+ {:.4}  V- {:.2e}  V0 {:.2e}",
                bus.id,
                v[0].norm(),
                v[1].norm(),
                v[2].norm(),
                p.norm(),
                n.norm(),
                z.norm()
            );
        }
    }
    let sol = power_flow(&spec, &PowerFlowOptions::default()).unwrap();
    sol.write_csv(&spec, std::io::stdout()).unwrap();
}
