//! Waveform to phasor conversion, phase to sequence conversion and power
//! bookkeeping.
//!
//! Phasors are RMS valued: a waveform `x(t) = √2·|X|·cos(ω₀t + ∠X)` has phasor
//! `X`. Time is absolute, so phasors taken from different records share the
//! same angle reference.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::netlist::ZipCoeffs;

/// Complex RMS phasor, per-unit.
pub type Phasor = Complex64;

/// Unit rotation `e^{j2π/3}`.
pub fn rot120() -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI / 3.0)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhasorError {
    #[error("record spans {span:.6e} s, shorter than one period {period:.6e} s")]
    ShortWindow { span: f64, period: f64 },
    #[error("sample spacing {dt:.6e} s does not divide the period {period:.6e} s")]
    UnevenWindow { dt: f64, period: f64 },
    #[error("a full-period fit needs at least 5 samples, got {0}")]
    TooFewSamples(usize),
}

/// Uniformly sampled waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveRecord {
    pub samples: Vec<f64>,
    pub dt: f64,
    pub t_start: f64,
}

impl WaveRecord {
    pub fn new(samples: Vec<f64>, dt: f64, t_start: f64) -> Self {
        WaveRecord {
            samples,
            dt,
            t_start,
        }
    }

    /// Sample `f` at `t_start + k·dt` for `k = 0..n`.
    pub fn sample(f: impl Fn(f64) -> f64, n: usize, dt: f64, t_start: f64) -> Self {
        let samples = (0..n).map(|k| f(t_start + k as f64 * dt)).collect();
        WaveRecord::new(samples, dt, t_start)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.dt
    }

    pub fn span(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    /// The final full period of the record, as `(first sample index, count)`.
    fn last_period(&self, omega0: f64) -> Result<(usize, usize), PhasorError> {
        let period = 2.0 * PI / omega0;
        let n = (period / self.dt).round();
        if (n * self.dt - period).abs() > 1e-9 * period {
            return Err(PhasorError::UnevenWindow {
                dt: self.dt,
                period,
            });
        }
        let n = n as usize;
        if self.samples.len() < n {
            return Err(PhasorError::ShortWindow {
                span: self.span(),
                period,
            });
        }
        if n < 5 {
            return Err(PhasorError::TooFewSamples(n));
        }
        Ok((self.samples.len() - n, n))
    }
}

/// Least-squares fit of `c₀ + Σ aₕcos(hω₀t) + bₕsin(hω₀t)` over the final full
/// period. Returns `(c₀, [(aₕ, bₕ)])` in the order of `orders`.
fn fit_harmonics(
    w: &WaveRecord,
    omega0: f64,
    orders: &[usize],
) -> Result<(f64, Vec<(f64, f64)>), PhasorError> {
    let (first, n) = w.last_period(omega0)?;
    let ncol = 1 + 2 * orders.len();
    let mut ata = DMatrix::<f64>::zeros(ncol, ncol);
    let mut atb = DVector::<f64>::zeros(ncol);
    let mut row = vec![0.0; ncol];
    for k in first..first + n {
        let t = w.time(k);
        row[0] = 1.0;
        for (j, &h) in orders.iter().enumerate() {
            let (s, c) = (h as f64 * omega0 * t).sin_cos();
            row[1 + 2 * j] = c;
            row[2 + 2 * j] = s;
        }
        let y = w.samples[k];
        for i in 0..ncol {
            atb[i] += row[i] * y;
            for j in 0..ncol {
                ata[(i, j)] += row[i] * row[j];
            }
        }
    }
    let coef = match ata.lu().solve(&atb) {
        Some(c) => c,
        None => return Ok((0.0, vec![(0.0, 0.0); orders.len()])),
    };
    let pairs = (0..orders.len())
        .map(|j| (coef[1 + 2 * j], coef[2 + 2 * j]))
        .collect();
    Ok((coef[0], pairs))
}

/// Fundamental-frequency phasor of a one-period record by least-squares
/// curve fitting of `A·cos ω₀t + B·sin ω₀t + C`. The DC term is discarded.
pub fn fit_phasor(w: &WaveRecord, omega0: f64) -> Result<Phasor, PhasorError> {
    let (_, ab) = fit_harmonics(w, omega0, &[1])?;
    let (a, b) = ab[0];
    Ok(Complex64::new(a, -b) * FRAC_1_SQRT_2)
}

/// Peak amplitude of the `h`-th harmonic (`h = 0` gives the magnitude of
/// the DC component).
pub fn harmonic_magnitude(w: &WaveRecord, omega0: f64, h: usize) -> Result<f64, PhasorError> {
    if h == 0 {
        let (c, _) = fit_harmonics(w, omega0, &[])?;
        return Ok(c.abs());
    }
    let (_, ab) = fit_harmonics(w, omega0, &[h])?;
    Ok(ab[0].0.hypot(ab[0].1))
}

/// Instantaneous value at time `t` of an RMS phasor rotating at `omega0`.
pub fn instantaneous(x: Phasor, omega0: f64, t: f64) -> f64 {
    SQRT_2 * (x * Complex64::from_polar(1.0, omega0 * t)).re
}

/// Positive-sequence component `(Xa + a·Xb + a²·Xc)/3`.
pub fn positive_sequence(x: &[Phasor; 3]) -> Phasor {
    let a = rot120();
    (x[0] + a * x[1] + a * a * x[2]) / 3.0
}

/// Zero, positive and negative sequence components.
pub fn sequence_components(x: &[Phasor; 3]) -> [Phasor; 3] {
    let a = rot120();
    let a2 = a * a;
    [
        (x[0] + x[1] + x[2]) / 3.0,
        (x[0] + a * x[1] + a2 * x[2]) / 3.0,
        (x[0] + a2 * x[1] + a * x[2]) / 3.0,
    ]
}

/// Balanced positive-sequence phase set with phase A equal to `x`.
pub fn balanced_set(x: Phasor) -> [Phasor; 3] {
    let a = rot120();
    [x, x * a * a, x * a]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerScope {
    PerPhase,
    PositiveSequence,
}

/// Complex power `V·I*`; a single phase contributes a third of that on the
/// three-phase power base.
pub fn device_power(v: Phasor, i: Phasor, scope: PowerScope) -> Complex64 {
    let s = v * i.conj();
    match scope {
        PowerScope::PositiveSequence => s,
        PowerScope::PerPhase => s / 3.0,
    }
}

/// Voltage-dependent ZIP power targets.
pub fn zip_target(v_mag: f64, zip: &ZipCoeffs, p0: f64, q0: f64) -> (f64, f64) {
    let v2 = v_mag * v_mag;
    let p = (zip.k_ps + zip.k_pi * v_mag + zip.k_pz * v2) * p0;
    let q = (zip.k_qs + zip.k_qi * v_mag + zip.k_qz * v2) * q0;
    (p, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const W0: f64 = 2.0 * PI * 60.0;

    fn record(f: impl Fn(f64) -> f64, n: usize) -> WaveRecord {
        let dt = 2.0 * PI / W0 / n as f64;
        WaveRecord::sample(f, n, dt, 0.0)
    }

    #[test]
    fn cosine_is_unit_phasor() {
        let x = fit_phasor(&record(|t| SQRT_2 * (W0 * t).cos(), 25), W0).unwrap();
        assert_abs_diff_eq!(x.re, 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(x.im, 0.0, epsilon = 1e-13);
    }

    #[test]
    fn sine_lags_by_quarter_period() {
        let x = fit_phasor(&record(|t| SQRT_2 * (W0 * t).sin(), 25), W0).unwrap();
        assert_abs_diff_eq!(x.norm(), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(x.arg(), -PI / 2.0, epsilon = 1e-13);
    }

    #[test]
    fn dc_and_second_harmonic_rejected() {
        let f = |t: f64| 2.0 + SQRT_2 * (W0 * t).cos() + 0.5 * (2.0 * W0 * t).cos();
        let x = fit_phasor(&record(f, 25), W0).unwrap();
        assert_abs_diff_eq!(x.re, 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(x.im, 0.0, epsilon = 1e-13);
    }

    #[test]
    fn constant_signal_gives_zero_phasor() {
        let x = fit_phasor(&record(|_| 3.5, 25), W0).unwrap();
        assert!(x.norm() < 1e-13);
    }

    #[test]
    fn window_errors() {
        let dt = 2.0 * PI / W0 / 25.0;
        let short = WaveRecord::sample(|t| t, 20, dt, 0.0);
        assert!(matches!(
            fit_phasor(&short, W0),
            Err(PhasorError::ShortWindow { .. })
        ));
        let uneven = WaveRecord::sample(|t| t, 40, dt * 1.013, 0.0);
        assert!(matches!(
            fit_phasor(&uneven, W0),
            Err(PhasorError::UnevenWindow { .. })
        ));
        let coarse = WaveRecord::sample(|t| t, 4, 2.0 * PI / W0 / 4.0, 0.0);
        assert_eq!(fit_phasor(&coarse, W0), Err(PhasorError::TooFewSamples(4)));
    }

    #[test]
    fn longer_records_use_the_last_period() {
        // amplitude changes after the first period; only the last one counts
        let f = |t: f64| {
            let amp = if t < 2.0 * PI / W0 - 1e-9 { 5.0 } else { 1.0 };
            SQRT_2 * amp * (W0 * t).cos()
        };
        let x = fit_phasor(&record(f, 25), W0).unwrap();
        assert_abs_diff_eq!(x.re, 5.0, epsilon = 1e-12);
        let dt = 2.0 * PI / W0 / 25.0;
        let two = WaveRecord::sample(f, 50, dt, 0.0);
        let x = fit_phasor(&two, W0).unwrap();
        assert_abs_diff_eq!(x.re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sequence_examples() {
        let a = rot120();
        let pos = positive_sequence(&[Complex64::new(1.0, 0.0), a * a, a]);
        assert_abs_diff_eq!((pos - 1.0).norm(), 0.0, epsilon = 1e-15);
        let one = Complex64::new(1.0, 0.0);
        assert!(positive_sequence(&[one, one, one]).norm() < 1e-15);
        let third = positive_sequence(&[one, Complex64::default(), Complex64::default()]);
        assert_abs_diff_eq!((third - 1.0 / 3.0).norm(), 0.0, epsilon = 1e-16);
    }

    #[test]
    fn power_examples() {
        let one = Complex64::new(1.0, 0.0);
        let s = device_power(one, one, PowerScope::PositiveSequence);
        assert_eq!(s, Complex64::new(1.0, 0.0));
        let s = device_power(one, Complex64::new(0.0, 1.0), PowerScope::PositiveSequence);
        assert_eq!(s, Complex64::new(0.0, -1.0));
        let s = device_power(one, Complex64::new(0.9, -0.3), PowerScope::PerPhase);
        assert_abs_diff_eq!(s.re, 0.30, epsilon = 1e-15);
        assert_abs_diff_eq!(s.im, 0.10, epsilon = 1e-15);
    }

    #[test]
    fn zip_examples() {
        let cp = ZipCoeffs::CONSTANT_POWER;
        assert_eq!(zip_target(0.87, &cp, 1.2, 0.4), (1.2, 0.4));
        let mix = ZipCoeffs::from_array([0.2, 0.3, 0.5, 0.1, 0.6, 0.3]);
        let (p, q) = zip_target(1.0, &mix, 1.2, 0.4);
        assert_abs_diff_eq!(p, 1.2, epsilon = 1e-15);
        assert_abs_diff_eq!(q, 0.4, epsilon = 1e-15);
        let z = ZipCoeffs::from_array([0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let (p, _) = zip_target(0.95, &z, 2.0, 0.0);
        assert_abs_diff_eq!(p, 0.9025 * 2.0, epsilon = 1e-15);
    }

    #[test]
    fn harmonic_examples() {
        let w = record(|t| (W0 * t).cos(), 25);
        assert!(harmonic_magnitude(&w, W0, 2).unwrap() < 1e-12);
        let w = record(|t| 1.0 + 0.2 * (2.0 * W0 * t).cos(), 25);
        assert_abs_diff_eq!(harmonic_magnitude(&w, W0, 2).unwrap(), 0.2, epsilon = 1e-13);
        let w = record(|_| 5.0, 25);
        assert_abs_diff_eq!(harmonic_magnitude(&w, W0, 0).unwrap(), 5.0, epsilon = 1e-13);
    }

    #[test]
    fn balanced_set_positive_sequence_is_phase_a() {
        let x = Complex64::new(0.7, -0.4);
        let set = balanced_set(x);
        assert_abs_diff_eq!((positive_sequence(&set) - x).norm(), 0.0, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn fit_is_linear(a in -3.0..3.0f64, b in -3.0..3.0f64, p in 0.0..6.3f64, q in 0.0..6.3f64) {
            let x = record(|t| (W0 * t + p).cos() + 0.3, 25);
            let y = record(|t| (W0 * t + q).sin() - 0.1 * (3.0 * W0 * t).cos(), 25);
            let combo = WaveRecord::new(
                x.samples.iter().zip(&y.samples).map(|(u, v)| a * u + b * v).collect(),
                x.dt,
                x.t_start,
            );
            let lhs = fit_phasor(&combo, W0).unwrap();
            let rhs = fit_phasor(&x, W0).unwrap() * a + fit_phasor(&y, W0).unwrap() * b;
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }
    }
}
