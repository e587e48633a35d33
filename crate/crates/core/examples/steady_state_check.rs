//! Initialize at T/25, then free-run five periods at 250 µs and check that
//! the start state really is periodic.

use emt_init::emt::StepOptions;
use emt_init::netlist::{parse_system, WSCC9_UNBALANCED};
use emt_init::pipeline::{initialize, simulate, InitConfig};
use emt_init::report::{state_drift, summarize};
use emt_init::shooting::{StateTag, Unknown};

fn main() {
    let mut spec = parse_system(WSCC9_UNBALANCED).unwrap();
    spec.set_unbalance(0.1).unwrap();
    let out = initialize(&spec, &InitConfig::default()).unwrap();
    let (sys, hist) = simulate(&spec, &out.state, 250e-6, 5, StepOptions::default()).unwrap();

    let periodic: Vec<usize> = out
        .problem
        .layout
        .entries
        .iter()
        .filter_map(|e| match e {
            Unknown::State {
                index,
                tag: StateTag::Periodic,
            } => Some(*index),
            _ => None,
        })
        .collect();
    let drift = state_drift(&hist, &periodic, &sys.state_names());
    let worst = drift
        .iter()
        .max_by(|a, b| a.relative().total_cmp(&b.relative()))
        .unwrap();
    println!("{} steps per period", sys.steps);
    println!(
        "worst periodic drift {:.3e} ({})",
        worst.relative(),
        worst.name
    );

    let series = |name: &str| hist.series(sys.state_index(name).unwrap());
    let speed = summarize("G2.speed", &hist.t, &series("G2.speed"), sys.omega_b).unwrap();
    println!("G2 speed 2nd harmonic {:.3e}", speed.harmonics[2]);
    let angle = summarize(
        "M5.rotor_angle",
        &hist.t,
        &series("M5.rotor_angle"),
        sys.omega_b,
    )
    .unwrap();
    println!(
        "motor angle per period {:?} (monotone {})",
        angle.drift.per_period,
        angle.drift.monotone()
    );
}
