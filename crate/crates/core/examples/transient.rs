//! One free-running period from the power-flow guess; writes a waveform
//! CSV to stdout.

use emt_init::emt::write_waveforms;
use emt_init::netlist::{parse_system, WSCC9_UNBALANCED};
use emt_init::pipeline::{prepare, InitConfig};

fn main() {
    let mut spec = parse_system(WSCC9_UNBALANCED).unwrap();
    spec.set_unbalance(0.1).unwrap();
    let prep = prepare(&spec, &InitConfig::default()).unwrap();
    let start = prep.problem.apply_unknowns(&prep.x0).unwrap();
    let sys = &prep.problem.system;
    let hist = sys.simulate(&start, 1).unwrap();
    let cols: Vec<(String, Vec<f64>)> = ["bus5.v.a", "bus5.v.b", "bus5.v.c", "M5.i.a", "G2.speed"]
        .iter()
        .map(|name| {
            let v = hist
                .t
                .iter()
                .zip(&hist.x)
                .map(|(t, x)| sys.quantity(name, x, *t).unwrap())
                .collect();
            (name.to_string(), v)
        })
        .collect();
    eprintln!(
        "{} states, {} steps of {:.3e} s",
        sys.dim(),
        sys.steps,
        sys.h
    );
    write_waveforms(std::io::stdout(), &hist.t, &cols).unwrap();
}
