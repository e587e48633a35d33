//! Phasor fitting, sequence components and power bookkeeping.

use std::f64::consts::PI;

use emt_init::phasor::{
    device_power, fit_phasor, harmonic_magnitude, sequence_components, PowerScope, WaveRecord,
};
use num_complex::Complex64;

fn main() {
    let w0 = 2.0 * PI * 60.0;
    let n = 25;
    let dt = 1.0 / 60.0 / n as f64;
    // DC, fundamental and a 2nd harmonic
    let rec = WaveRecord::sample(
        |t| 2.0 + 2f64.sqrt() * (w0 * t).cos() + 0.5 * (2.0 * w0 * t).cos(),
        n,
        dt,
        0.0,
    );
    let x = fit_phasor(&rec, w0).unwrap();
    println!("fundamental {:.12} ∠ {:.3e} rad", x.norm(), x.arg());
    println!(
        "2nd harmonic {:.12}",
        harmonic_magnitude(&rec, w0, 2).unwrap()
    );

    let v = [
        Complex64::from_polar(1.02, 0.0),
        Complex64::from_polar(0.97, -2.0 * PI / 3.0 - 0.03),
        Complex64::from_polar(1.00, 2.0 * PI / 3.0 + 0.02),
    ];
    let i = [
        Complex64::new(0.8, -0.3),
        Complex64::new(-0.5, -0.6),
        Complex64::new(-0.2, 0.85),
    ];
    let [v0, v1, v2] = sequence_components(&v);
    let [i0, i1, i2] = sequence_components(&i);
    println!(
        "|V0| {:.4e}  |V+| {:.6}  |V-| {:.4e}",
        v0.norm(),
        v1.norm(),
        v2.norm()
    );

    let phase: Complex64 = (0..3)
        .map(|k| device_power(v[k], i[k], PowerScope::PerPhase))
        .sum();
    let seq = v0 * i0.conj() + v1 * i1.conj() + v2 * i2.conj();
    println!("per-phase sum {phase:.6}  sequence sum {seq:.6}");
}
