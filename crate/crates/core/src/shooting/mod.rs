//! Shooting residual.
//!
//! The unknown vector holds, in order, every dynamic state at `t0`, the
//! dependent load parameters and the constant device inputs. The residual
//! runs one nominal period from the applied unknowns and stacks
//!
//! 1. `x(t0 + T) − x(t0)` for every periodic state,
//! 2. `y0 − y(t0)` for every pinned state (motor rotor angles),
//! 3. the power-flow conditions measured on the simulated waveforms,
//!
//! in that order.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DVector;
use thiserror::Error;

use crate::emt::induction::ROTOR_ANGLE;
use crate::emt::{EmtError, System, SystemState, TrajectoryRecord};
use crate::guess::{load_phase_targets, InitialGuess};
use crate::netlist::{DeviceRef, NetlistError, PfKind, PqScope, SystemSpec};
use crate::phasor::{device_power, positive_sequence, zip_target, PhasorError, PowerScope};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ShootingError {
    #[error("unknown vector has {got} entries, layout has {want}")]
    Dimension { got: usize, want: usize },
    #[error("{residuals} power-flow residuals against {unknowns} parameters and inputs; unmatched: {detail}")]
    Balance {
        residuals: usize,
        unknowns: usize,
        detail: String,
    },
    #[error("no value for unknown `{0}`")]
    MissingUnknown(String),
    #[error("`{0}` is not an unknown of this system")]
    UnexpectedUnknown(String),
    #[error("condition references unknown or unrecorded device `{0}`")]
    MissingDevice(String),
    #[error(transparent)]
    Simulation(#[from] EmtError),
    #[error(transparent)]
    Phasor(#[from] PhasorError),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateTag {
    Periodic,
    /// Held at `y0` instead of being periodic.
    InitialValue {
        y0: f64,
    },
}

/// Which phases a load parameter entry drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phases {
    One(usize),
    All,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unknown {
    State { index: usize, tag: StateTag },
    LoadR { load: usize, phases: Phases },
    LoadX { load: usize, phases: Phases },
    Efd(usize),
    Tm(usize),
    Tl(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualKind {
    Periodic,
    InitialValue,
    PowerFlow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnknownLayout {
    pub entries: Vec<Unknown>,
    pub names: Vec<String>,
    pub residual_kinds: Vec<ResidualKind>,
    pub residual_names: Vec<String>,
}

impl UnknownLayout {
    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn count(&self, kind: ResidualKind) -> usize {
        self.residual_kinds.iter().filter(|k| **k == kind).count()
    }

    /// Set the pinned value of every initial-value state.
    pub fn set_pins(&mut self, pins: &[(usize, f64)]) {
        for e in &mut self.entries {
            if let Unknown::State {
                index,
                tag: StateTag::InitialValue { y0 },
            } = e
            {
                if let Some((_, v)) = pins.iter().find(|(i, _)| i == index) {
                    *y0 = *v;
                }
            }
        }
    }

    /// Unknown vector from `(name, value)` pairs in any order; every name
    /// must appear exactly once.
    pub fn from_named(&self, pairs: &[(String, f64)]) -> Result<DVector<f64>, ShootingError> {
        let mut x = vec![None; self.dim()];
        for (name, v) in pairs {
            let i = self
                .index(name)
                .ok_or_else(|| ShootingError::UnexpectedUnknown(name.clone()))?;
            x[i] = Some(*v);
        }
        let vals = x
            .iter()
            .zip(&self.names)
            .map(|(v, n)| v.ok_or_else(|| ShootingError::MissingUnknown(n.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DVector::from_vec(vals))
    }

    /// Unknown vector of a state.
    pub fn pack(&self, s: &SystemState) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.entries.iter().map(|e| match *e {
                Unknown::State { index, .. } => s.x[index],
                Unknown::LoadR { load, phases } => s.inputs.load_r[load][first(phases)],
                Unknown::LoadX { load, phases } => s.inputs.load_x[load][first(phases)],
                Unknown::Efd(g) => s.inputs.efd[g],
                Unknown::Tm(g) => s.inputs.tm[g],
                Unknown::Tl(m) => s.inputs.tl[m],
            }),
        )
    }

    /// Write `x` over `base`: states become the initial condition, the
    /// parameters and inputs replace the device values.
    pub fn apply_unknowns(
        &self,
        base: &SystemState,
        x: &DVector<f64>,
    ) -> Result<SystemState, ShootingError> {
        if x.len() != self.dim() {
            return Err(ShootingError::Dimension {
                got: x.len(),
                want: self.dim(),
            });
        }
        let mut s = base.clone();
        let set = |arr: &mut [f64; 3], phases: Phases, v: f64| match phases {
            Phases::One(ph) => arr[ph] = v,
            Phases::All => *arr = [v; 3],
        };
        for (e, &v) in self.entries.iter().zip(x.iter()) {
            match *e {
                Unknown::State { index, .. } => s.x[index] = v,
                Unknown::LoadR { load, phases } => set(&mut s.inputs.load_r[load], phases, v),
                Unknown::LoadX { load, phases } => set(&mut s.inputs.load_x[load], phases, v),
                Unknown::Efd(g) => s.inputs.efd[g] = v,
                Unknown::Tm(g) => s.inputs.tm[g] = v,
                Unknown::Tl(m) => s.inputs.tl[m] = v,
            }
        }
        Ok(s)
    }
}

fn first(p: Phases) -> usize {
    match p {
        Phases::One(ph) => ph,
        Phases::All => 0,
    }
}

/// Residual names a condition contributes, in emission order.
fn condition_labels(spec: &SystemSpec, device: &str, kind: &PfKind) -> Vec<String> {
    let q = |q0: f64| q0 != 0.0;
    match *kind {
        PfKind::VTheta { .. } => vec![format!("{device}.v_re"), format!("{device}.v_im")],
        PfKind::Pv { .. } => vec![format!("{device}.p"), format!("{device}.v")],
        PfKind::MotorP { .. } => vec![format!("{device}.p")],
        PfKind::Pq { q0, scope, .. } => {
            let mut out = Vec::new();
            let sites: Vec<String> = match scope {
                PqScope::PerPhase { .. }
                    if matches!(spec.device(device), Some(DeviceRef::Load(_))) =>
                {
                    crate::emt::PHASES.iter().map(|p| format!(".{p}")).collect()
                }
                _ => vec![String::new()],
            };
            for site in sites {
                out.push(format!("{device}.p{site}"));
                if q(q0) {
                    out.push(format!("{device}.q{site}"));
                }
            }
            out
        }
    }
}

/// Assemble the layout for `sys`; pins start at zero.
pub fn build_layout(spec: &SystemSpec, sys: &System) -> Result<UnknownLayout, ShootingError> {
    let state_names = sys.state_names();
    let pinned: Vec<usize> = (0..sys.motors.len())
        .map(|m| sys.layout.motor(m) + ROTOR_ANGLE)
        .collect();
    let mut layout = UnknownLayout {
        entries: Vec::new(),
        names: Vec::new(),
        residual_kinds: Vec::new(),
        residual_names: Vec::new(),
    };
    for (index, name) in state_names.iter().enumerate() {
        let tag = if pinned.contains(&index) {
            StateTag::InitialValue { y0: 0.0 }
        } else {
            StateTag::Periodic
        };
        layout.entries.push(Unknown::State { index, tag });
        layout.names.push(name.clone());
    }
    for (index, name) in state_names.iter().enumerate() {
        if !pinned.contains(&index) {
            layout.residual_kinds.push(ResidualKind::Periodic);
            layout.residual_names.push(format!("periodic:{name}"));
        }
    }
    for &index in &pinned {
        layout.residual_kinds.push(ResidualKind::InitialValue);
        layout
            .residual_names
            .push(format!("initial:{}", state_names[index]));
    }

    let pushed = |layout: &mut UnknownLayout, e: Unknown, name: String| {
        layout.entries.push(e);
        layout.names.push(name);
    };
    for (k, unit) in sys.loads.iter().enumerate() {
        let Some(PfKind::Pq { scope, .. }) = spec.condition_for(&unit.id).map(|c| c.kind) else {
            continue;
        };
        match scope {
            PqScope::PerPhase { .. } => {
                for (ph, p) in crate::emt::PHASES.iter().enumerate() {
                    pushed(
                        &mut layout,
                        Unknown::LoadR {
                            load: k,
                            phases: Phases::One(ph),
                        },
                        format!("{}.r.{p}", unit.id),
                    );
                    if unit.inductive {
                        pushed(
                            &mut layout,
                            Unknown::LoadX {
                                load: k,
                                phases: Phases::One(ph),
                            },
                            format!("{}.x.{p}", unit.id),
                        );
                    }
                }
            }
            PqScope::PositiveSequence => {
                pushed(
                    &mut layout,
                    Unknown::LoadR {
                        load: k,
                        phases: Phases::All,
                    },
                    format!("{}.r", unit.id),
                );
                if unit.inductive {
                    pushed(
                        &mut layout,
                        Unknown::LoadX {
                            load: k,
                            phases: Phases::All,
                        },
                        format!("{}.x", unit.id),
                    );
                }
            }
        }
    }
    for (g, unit) in sys.gens.iter().enumerate() {
        pushed(&mut layout, Unknown::Efd(g), format!("{}.efd", unit.id));
        pushed(&mut layout, Unknown::Tm(g), format!("{}.tm", unit.id));
    }
    for (m, unit) in sys.motors.iter().enumerate() {
        pushed(&mut layout, Unknown::Tl(m), format!("{}.tl", unit.id));
    }

    let mut unmatched = Vec::new();
    for c in &spec.conditions {
        if spec.device(&c.device).is_none() {
            return Err(ShootingError::MissingDevice(c.device.clone()));
        }
        for label in condition_labels(spec, &c.device, &c.kind) {
            layout.residual_kinds.push(ResidualKind::PowerFlow);
            layout.residual_names.push(label);
        }
    }
    let residuals = layout.count(ResidualKind::PowerFlow);
    let unknowns = layout.dim() - state_names.len();
    if residuals != unknowns {
        for (g, unit) in sys.gens.iter().enumerate() {
            if spec.condition_for(&unit.id).is_none() {
                unmatched.push(format!(
                    "{} (no condition for efd/tm)",
                    spec.generators[g].id
                ));
            }
        }
        for unit in &sys.motors {
            if spec.condition_for(&unit.id).is_none() {
                unmatched.push(format!("{} (no condition for tl)", unit.id));
            }
        }
        for c in &spec.conditions {
            if let (Some(DeviceRef::Generator(_)), PfKind::MotorP { .. }) =
                (spec.device(&c.device), c.kind)
            {
                unmatched.push(format!("{} ({} on a generator)", c.device, c.kind.name()));
            }
        }
        if unmatched.is_empty() {
            unmatched.push("count mismatch".to_string());
        }
        return Err(ShootingError::Balance {
            residuals,
            unknowns,
            detail: unmatched.join(", "),
        });
    }
    Ok(layout)
}

/// Power-flow residuals of every condition, measured on a one-period
/// trajectory.
pub fn pf_residuals(
    traj: &TrajectoryRecord,
    spec: &SystemSpec,
    omega0: f64,
) -> Result<Vec<f64>, ShootingError> {
    let mut out = Vec::new();
    for c in &spec.conditions {
        let w = traj
            .device(&c.device)
            .ok_or_else(|| ShootingError::MissingDevice(c.device.clone()))?;
        let (v, i) = traj.phasors(w, omega0)?;
        let vp = positive_sequence(&v);
        let ip = positive_sequence(&i);
        let sp = device_power(vp, ip, PowerScope::PositiveSequence);
        match c.kind {
            PfKind::VTheta { v: vm, theta } => {
                out.push(vm * theta.cos() - vp.re);
                out.push(vm * theta.sin() - vp.im);
            }
            PfKind::Pv { p, v: vm } => {
                out.push(p - sp.re);
                out.push(vm - vp.norm());
            }
            PfKind::MotorP { p } => out.push(p - sp.re),
            PfKind::Pq { p0, q0, zip, scope } => {
                let with_q = q0 != 0.0;
                match (scope, spec.device(&c.device)) {
                    (PqScope::PerPhase { .. }, Some(DeviceRef::Load(k))) => {
                        let targets = load_phase_targets(spec, k, v.map(|x| x.norm()))?;
                        for ph in 0..3 {
                            let s = device_power(v[ph], i[ph], PowerScope::PerPhase);
                            out.push(targets[ph].re - s.re);
                            if with_q {
                                out.push(targets[ph].im - s.im);
                            }
                        }
                    }
                    _ => {
                        let (pt, qt) = zip_target(vp.norm(), &zip, p0, q0);
                        out.push(pt - sp.re);
                        if with_q {
                            out.push(qt - sp.im);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One residual evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub values: DVector<f64>,
    pub norm: f64,
    pub periodic_norm: f64,
    pub initial_norm: f64,
    pub power_flow_norm: f64,
    /// Value of the evaluation counter after this evaluation.
    pub evaluation: usize,
}

/// System template, layout and the fixed part of the start state.
#[derive(Debug)]
pub struct ShootingProblem {
    pub spec: SystemSpec,
    pub system: System,
    pub layout: UnknownLayout,
    /// Start state whose non-unknown entries (fixed loads) stay as given.
    pub base: SystemState,
    evaluations: AtomicUsize,
}

impl ShootingProblem {
    /// Layout for `system`, pinned at the guess values.
    pub fn new(
        spec: &SystemSpec,
        system: System,
        guess: &InitialGuess,
    ) -> Result<Self, ShootingError> {
        let mut layout = build_layout(spec, &system)?;
        layout.set_pins(&guess.pins);
        Ok(ShootingProblem {
            spec: spec.clone(),
            system,
            layout,
            base: guess.state.clone(),
            evaluations: AtomicUsize::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn pack(&self, s: &SystemState) -> DVector<f64> {
        self.layout.pack(s)
    }

    pub fn apply_unknowns(&self, x: &DVector<f64>) -> Result<SystemState, ShootingError> {
        self.layout.apply_unknowns(&self.base, x)
    }

    /// Residual evaluations so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    /// One-period trajectory from the applied unknowns.
    pub fn trajectory(&self, x: &DVector<f64>) -> Result<TrajectoryRecord, ShootingError> {
        let start = self.apply_unknowns(x)?;
        Ok(self.system.run_period(&start)?)
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<ResidualReport, ShootingError> {
        let start = self.apply_unknowns(x)?;
        let evaluation = self.evaluations.fetch_add(1, Ordering::Relaxed) + 1;
        let traj = self.system.run_period(&start)?;
        let mut values = Vec::with_capacity(self.dim());
        let mut pins = Vec::new();
        for e in &self.layout.entries {
            match *e {
                Unknown::State {
                    index,
                    tag: StateTag::Periodic,
                } => values.push(traj.end.x[index] - start.x[index]),
                Unknown::State {
                    index,
                    tag: StateTag::InitialValue { y0 },
                } => pins.push(y0 - start.x[index]),
                _ => {}
            }
        }
        values.extend(pins);
        values.extend(pf_residuals(&traj, &self.spec, self.system.omega_b)?);
        let values = DVector::from_vec(values);
        let sub = |kind| {
            values
                .iter()
                .zip(&self.layout.residual_kinds)
                .filter(|(_, k)| **k == kind)
                .map(|(v, _)| v * v)
                .sum::<f64>()
                .sqrt()
        };
        Ok(ResidualReport {
            norm: values.norm(),
            periodic_norm: sub(ResidualKind::Periodic),
            initial_norm: sub(ResidualKind::InitialValue),
            power_flow_norm: sub(ResidualKind::PowerFlow),
            values,
            evaluation,
        })
    }

    /// Residual vector only, for the nonlinear solver.
    pub fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>, ShootingError> {
        self.evaluate(x).map(|r| r.values)
    }
}

#[cfg(test)]
mod tests;
