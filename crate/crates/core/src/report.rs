//! Post-run checks: period-boundary drift and harmonic content.

use std::io::{Read, Write};

use thiserror::Error;

use crate::emt::StateHistory;
use crate::phasor::{harmonic_magnitude, PhasorError, WaveRecord};

/// Highest harmonic order in a harmonic table.
pub const MAX_HARMONIC: usize = 3;

/// Scale below which drift is reported against this floor instead of the
/// signal's own peak.
pub const DRIFT_FLOOR: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("waveform file has no `t` column")]
    NoTime,
    #[error("line {line}: `{value}` is not a number")]
    Number { line: usize, value: String },
    #[error("waveform needs at least two samples")]
    TooShort,
    #[error(transparent)]
    Phasor(#[from] PhasorError),
}

/// Columns of a waveform CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveforms {
    pub t: Vec<f64>,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl Waveforms {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }
}

/// Read `t,<column>...` as written by [`crate::emt::write_waveforms`].
pub fn read_waveforms<R: Read>(r: R) -> Result<Waveforms, ReportError> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    if header.get(0) != Some("t") {
        return Err(ReportError::NoTime);
    }
    let mut t = Vec::new();
    let mut cols: Vec<(String, Vec<f64>)> = header
        .iter()
        .skip(1)
        .map(|h| (h.to_string(), Vec::new()))
        .collect();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| ReportError::Number {
                line: row + 2,
                value: s.to_string(),
            })
        };
        t.push(parse(rec.get(0).unwrap_or(""))?);
        for (j, (_, v)) in cols.iter_mut().enumerate() {
            v.push(parse(rec.get(j + 1).unwrap_or(""))?);
        }
    }
    Ok(Waveforms { t, columns: cols })
}

/// Period-boundary behaviour of one signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Drift {
    pub name: String,
    /// `x(t0 + (p+1)T) − x(t0 + pT)` for each full period.
    pub per_period: Vec<f64>,
    pub peak: f64,
}

impl Drift {
    fn new(name: String, boundaries: &[f64], peak: f64) -> Self {
        Drift {
            name,
            per_period: boundaries.windows(2).map(|w| w[1] - w[0]).collect(),
            peak,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.per_period.iter().fold(0.0, |m, d| m.max(d.abs()))
    }

    /// Largest boundary change over `max(peak, DRIFT_FLOOR)`.
    pub fn relative(&self) -> f64 {
        self.max_abs() / self.peak.max(DRIFT_FLOOR)
    }

    /// Every period moves the same way.
    pub fn monotone(&self) -> bool {
        self.per_period.iter().all(|d| *d > 0.0) || self.per_period.iter().all(|d| *d < 0.0)
    }
}

/// Drift of the states `indices` (named by `names`) over a free run.
pub fn state_drift(hist: &StateHistory, indices: &[usize], names: &[String]) -> Vec<Drift> {
    let bounds = hist.period_boundaries();
    indices
        .iter()
        .map(|&i| {
            let b: Vec<f64> = bounds.iter().map(|x| x[i]).collect();
            let peak = hist.x.iter().fold(0.0_f64, |m, x| m.max(x[i].abs()));
            Drift::new(names[i].clone(), &b, peak)
        })
        .collect()
}

/// Drift and harmonic content of one sampled signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSummary {
    pub drift: Drift,
    /// Peak amplitude of orders `0..=MAX_HARMONIC` over the last period.
    pub harmonics: [f64; MAX_HARMONIC + 1],
}

/// Summarise a column sampled at `t` (uniform, starting at a period
/// boundary) against nominal angular frequency `omega0`.
pub fn summarize(
    name: &str,
    t: &[f64],
    v: &[f64],
    omega0: f64,
) -> Result<ColumnSummary, ReportError> {
    if t.len() < 2 {
        return Err(ReportError::TooShort);
    }
    let dt = t[1] - t[0];
    let n = ((2.0 * std::f64::consts::PI / omega0) / dt)
        .round()
        .max(1.0) as usize;
    let boundaries: Vec<f64> = v.iter().step_by(n).copied().collect();
    let peak = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let drift = Drift::new(name.to_string(), &boundaries, peak);
    let rec = WaveRecord::new(v.to_vec(), dt, t[0]);
    let mut harmonics = [0.0; MAX_HARMONIC + 1];
    for (h, out) in harmonics.iter_mut().enumerate() {
        *out = harmonic_magnitude(&rec, omega0, h)?;
    }
    Ok(ColumnSummary { drift, harmonics })
}

/// `name,max_abs_drift,relative_drift,monotone`.
pub fn write_drift_csv<W: Write>(w: W, rows: &[Drift]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["name", "max_abs_drift", "relative_drift", "monotone"])?;
    for d in rows {
        out.write_record([
            d.name.clone(),
            format!("{:e}", d.max_abs()),
            format!("{:e}", d.relative()),
            d.monotone().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `name,h0,h1,h2,h3`.
pub fn write_harmonics_csv<W: Write>(w: W, rows: &[ColumnSummary]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["name".to_string()];
    header.extend((0..=MAX_HARMONIC).map(|h| format!("h{h}")));
    out.write_record(&header)?;
    for s in rows {
        let mut rec = vec![s.drift.name.clone()];
        rec.extend(s.harmonics.iter().map(|h| format!("{h:e}")));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
