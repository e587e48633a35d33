//! Simulation records and waveform export.

use std::io::Write;

use nalgebra::DVector;

use super::{SystemState, PHASES};
use crate::phasor::{fit_phasor, Phasor, PhasorError, WaveRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceKind {
    Generator,
    Motor,
    Load,
}

/// Terminal voltages and device currents of one device, three phases each.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceWaves {
    pub device: String,
    pub kind: DeviceKind,
    pub bus: usize,
    pub v: [Vec<f64>; 3],
    pub i: [Vec<f64>; 3],
}

impl DeviceWaves {
    pub(crate) fn new(device: &str, kind: DeviceKind, bus: usize, n: usize) -> Self {
        let buf = || Vec::with_capacity(n);
        DeviceWaves {
            device: device.to_string(),
            kind,
            bus,
            v: [buf(), buf(), buf()],
            i: [buf(), buf(), buf()],
        }
    }

    pub(crate) fn push(&mut self, v: [f64; 3], i: [f64; 3]) {
        for ph in 0..3 {
            self.v[ph].push(v[ph]);
            self.i[ph].push(i[ph]);
        }
    }
}

/// One-period simulation output.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub t0: f64,
    pub h: f64,
    pub steps: usize,
    pub start: SystemState,
    pub end: SystemState,
    /// Samples at `t0 + k·h`, `k = 1..=steps`.
    pub waves: Vec<DeviceWaves>,
}

impl TrajectoryRecord {
    pub fn device(&self, id: &str) -> Option<&DeviceWaves> {
        self.waves.iter().find(|w| w.device == id)
    }

    fn record(&self, samples: &[f64]) -> WaveRecord {
        WaveRecord::new(samples.to_vec(), self.h, self.t0 + self.h)
    }

    /// Per-phase voltage and current phasors of a device.
    pub fn phasors(
        &self,
        w: &DeviceWaves,
        omega0: f64,
    ) -> Result<([Phasor; 3], [Phasor; 3]), PhasorError> {
        let mut v = [Phasor::new(0.0, 0.0); 3];
        let mut i = v;
        for ph in 0..3 {
            v[ph] = fit_phasor(&self.record(&w.v[ph]), omega0)?;
            i[ph] = fit_phasor(&self.record(&w.i[ph]), omega0)?;
        }
        Ok((v, i))
    }
}

/// Full state trajectory of a free run.
#[derive(Debug, Clone, PartialEq)]
pub struct StateHistory {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub steps_per_period: usize,
}

impl StateHistory {
    pub(crate) fn with_capacity(n: usize, steps_per_period: usize) -> Self {
        StateHistory {
            t: Vec::with_capacity(n),
            x: Vec::with_capacity(n),
            steps_per_period,
        }
    }

    pub(crate) fn push(&mut self, t: f64, x: DVector<f64>) {
        self.t.push(t);
        self.x.push(x);
    }

    /// States at `t0 + p·T` for `p = 0..=periods`.
    pub fn period_boundaries(&self) -> Vec<&DVector<f64>> {
        self.x.iter().step_by(self.steps_per_period).collect()
    }

    pub fn series(&self, index: usize) -> Vec<f64> {
        self.x.iter().map(|x| x[index]).collect()
    }
}

/// Write `t,<column>...` rows; `columns` pairs each header with its values.
pub fn write_waveforms<W: Write>(
    w: W,
    t: &[f64],
    columns: &[(String, Vec<f64>)],
) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.clone()));
    out.write_record(&header)?;
    for (k, tk) in t.iter().enumerate() {
        let mut row = vec![format!("{tk:e}")];
        row.extend(columns.iter().map(|(_, v)| format!("{:e}", v[k])));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Column names for the three phases of a quantity.
pub fn phase_columns(device: &str, quantity: &str) -> [String; 3] {
    PHASES.map(|p| format!("{device}.{quantity}.{p}"))
}
