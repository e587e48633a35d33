//! Phase-domain transient simulation.
//!
//! Every bus is a shunt capacitor per phase and every series element is an
//! inductor, so the whole system is an ODE `ẋ = f(x, t)` with states
//!
//! * bus voltages, three per bus,
//! * branch currents, three per branch,
//! * machine states (see [`machine`] and [`induction`]),
//! * load inductor currents, three per inductive load.
//!
//! Integration is implicit trapezoidal. By default each state's step
//! coefficient is prewarped (`tan(ωh/2)/ω` in place of `h/2`) to the
//! frequency its steady state oscillates at: the nominal `ω₀` for network
//! states and `2ω₀` for machine states, where unbalance appears as
//! negative-sequence ripple. The motor's slip angle is a ramp and stays
//! unwarped. Unbalanced periodic steady state then depends only weakly on
//! the step size. Each step is solved by Newton iteration on the full
//! system with one Jacobian per step.

pub mod induction;
pub mod integrate;
pub mod machine;
mod network;
mod record;

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::netlist::SystemSpec;
use induction::{InductionMachine, MOTOR_STATES, MOTOR_STATE_NAMES};
use machine::{SyncMachine, GEN_STATES, GEN_STATE_NAMES};

pub use network::{Branch, StateLayout};
pub use record::{
    phase_columns, write_waveforms, DeviceKind, DeviceWaves, StateHistory, TrajectoryRecord,
};

pub const PHASES: [&str; 3] = ["a", "b", "c"];

const TWO_PI_3: f64 = 2.0 * PI / 3.0;

/// `(d, q)` components of a phase set; zero sequence dropped.
pub fn park(v: [f64; 3], theta: f64) -> (f64, f64) {
    let k = SQRT_2 / 3.0;
    let (mut d, mut q) = (0.0, 0.0);
    for (ph, vp) in v.iter().enumerate() {
        let (s, c) = (theta - ph as f64 * TWO_PI_3).sin_cos();
        d += vp * c;
        q -= vp * s;
    }
    (k * d, k * q)
}

/// Phase values of a `(d, q)` pair; zero sequence is zero.
pub fn inv_park(d: f64, q: f64, theta: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (ph, o) in out.iter_mut().enumerate() {
        let (s, c) = (theta - ph as f64 * TWO_PI_3).sin_cos();
        *o = SQRT_2 * (d * c - q * s);
    }
    out
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EmtError {
    #[error("step {h:.6e} s does not divide the period {period:.6e} s")]
    StepNotDivisor { h: f64, period: f64 },
    #[error("bus {0} has no shunt capacitance")]
    NoCapacitance(String),
    #[error("unknown bus `{0}`")]
    UnknownBus(String),
    #[error("step {step}: non-finite state")]
    NonFinite { step: usize },
    #[error("step {step}: step iteration stalled at correction {correction:.3e}")]
    Stalled { step: usize, correction: f64 },
    #[error("step {step}: singular step matrix")]
    Singular { step: usize },
    #[error("state dimension {got} does not match system dimension {want}")]
    Dimension { got: usize, want: usize },
}

/// What replaces the first step after a new state is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscontinuityTreatment {
    /// Plain trapezoidal first step.
    Off,
    /// Two half-length backward-Euler steps.
    BackwardEuler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub prewarp: bool,
    pub first_step: DiscontinuityTreatment,
    /// Newton correction tolerance, relative to `max(1, ‖x‖∞)`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            prewarp: true,
            first_step: DiscontinuityTreatment::Off,
            tolerance: 1e-13,
            max_iterations: 40,
        }
    }
}

/// Device parameters and external inputs that stay constant during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    pub load_r: Vec<[f64; 3]>,
    pub load_x: Vec<[f64; 3]>,
    pub efd: Vec<f64>,
    pub tm: Vec<f64>,
    pub tl: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub t: f64,
    pub x: DVector<f64>,
    pub inputs: Inputs,
}

#[derive(Debug, Clone)]
pub(crate) struct GenUnit {
    pub id: String,
    pub bus: usize,
    pub model: SyncMachine,
}

#[derive(Debug, Clone)]
pub(crate) struct MotorUnit {
    pub id: String,
    pub bus: usize,
    pub model: InductionMachine,
}

#[derive(Debug, Clone)]
pub(crate) struct LoadUnit {
    pub id: String,
    pub bus: usize,
    pub inductive: bool,
}

/// Assembled system: topology, device models, step size and the current
/// state.
#[derive(Debug, Clone)]
pub struct System {
    pub omega_b: f64,
    pub period: f64,
    pub steps: usize,
    pub h: f64,
    pub options: StepOptions,
    pub layout: StateLayout,
    pub(crate) bus_ids: Vec<String>,
    pub(crate) cap_inv: Vec<f64>,
    pub(crate) branches: Vec<Branch>,
    pub(crate) gens: Vec<GenUnit>,
    pub(crate) motors: Vec<MotorUnit>,
    pub(crate) loads: Vec<LoadUnit>,
    state: SystemState,
    origin: f64,
    step_count: usize,
    /// Jacobian of the linear part for the current inputs.
    net: DMatrix<f64>,
}

/// Steps per period for step `h`, rejecting steps that do not divide `T`.
pub fn steps_per_period(period: f64, h: f64) -> Result<usize, EmtError> {
    let n = (period / h).round();
    if n < 1.0 || (n * h - period).abs() > 1e-9 * period {
        return Err(EmtError::StepNotDivisor { h, period });
    }
    Ok(n as usize)
}

/// A load gets an inductor when its power-flow condition (or, without
/// one, its nominal power) has a reactive part.
pub(crate) fn load_is_reactive(spec: &SystemSpec, load: &crate::netlist::LoadSpec) -> bool {
    match spec.condition_for(&load.id).map(|c| c.kind) {
        Some(crate::netlist::PfKind::Pq { q0, .. }) => q0 != 0.0,
        _ => load.s_total.im != 0.0,
    }
}

/// Assemble the system for step `h`, which must divide the nominal period.
pub fn build_system(spec: &SystemSpec, h: f64) -> Result<System, EmtError> {
    let period = spec.period();
    let steps = steps_per_period(period, h)?;
    let omega_b = spec.omega_base();
    let bus = |id: &str| {
        spec.bus_index(id)
            .ok_or_else(|| EmtError::UnknownBus(id.to_string()))
    };

    let mut b_total: Vec<f64> = spec.buses.iter().map(|b| b.b_shunt).collect();
    let mut branches = Vec::with_capacity(spec.branches.len());
    for br in &spec.branches {
        let (f, t) = (bus(&br.from)?, bus(&br.to)?);
        b_total[f] += 0.5 * br.b;
        b_total[t] += 0.5 * br.b;
        branches.push(Branch {
            id: br.id.clone(),
            from: f,
            to: t,
            r: br.r,
            l_inv: omega_b / br.x,
            ratio: br.ratio,
        });
    }
    let mut cap_inv = Vec::with_capacity(b_total.len());
    for (b, bt) in spec.buses.iter().zip(&b_total) {
        if !(*bt > 0.0) {
            return Err(EmtError::NoCapacitance(b.id.clone()));
        }
        cap_inv.push(omega_b / bt);
    }
    let gens = spec
        .generators
        .iter()
        .map(|g| {
            Ok(GenUnit {
                id: g.id.clone(),
                bus: bus(&g.bus)?,
                model: SyncMachine::new(g.params(spec.base_mva), omega_b),
            })
        })
        .collect::<Result<Vec<_>, EmtError>>()?;
    let motors = spec
        .motors
        .iter()
        .map(|m| {
            Ok(MotorUnit {
                id: m.id.clone(),
                bus: bus(&m.bus)?,
                model: InductionMachine::new(m.params(spec.base_mva), omega_b),
            })
        })
        .collect::<Result<Vec<_>, EmtError>>()?;
    let loads = spec
        .loads
        .iter()
        .map(|l| {
            Ok(LoadUnit {
                id: l.id.clone(),
                bus: bus(&l.bus)?,
                inductive: load_is_reactive(spec, l),
            })
        })
        .collect::<Result<Vec<_>, EmtError>>()?;

    let layout = StateLayout::new(
        spec.buses.len(),
        branches.len(),
        gens.len(),
        motors.len(),
        &loads,
    );
    let inputs = Inputs {
        load_r: vec![[1.0; 3]; loads.len()],
        load_x: loads
            .iter()
            .map(|l| if l.inductive { [1.0; 3] } else { [0.0; 3] })
            .collect(),
        efd: vec![1.0; gens.len()],
        tm: vec![0.0; gens.len()],
        tl: vec![0.0; motors.len()],
    };
    let dim = layout.dim;
    let mut sys = System {
        omega_b,
        period,
        steps,
        h: period / steps as f64,
        options: StepOptions::default(),
        layout,
        bus_ids: spec.buses.iter().map(|b| b.id.clone()).collect(),
        cap_inv,
        branches,
        gens,
        motors,
        loads,
        state: SystemState {
            t: 0.0,
            x: DVector::zeros(dim),
            inputs,
        },
        origin: 0.0,
        step_count: 0,
        net: DMatrix::zeros(dim, dim),
    };
    sys.net = sys.linear_jacobian(&sys.state.inputs);
    Ok(sys)
}

impl System {
    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn bus_ids(&self) -> &[String] {
        &self.bus_ids
    }

    pub fn generator_ids(&self) -> impl Iterator<Item = &str> {
        self.gens.iter().map(|g| g.id.as_str())
    }

    pub fn motor_ids(&self) -> impl Iterator<Item = &str> {
        self.motors.iter().map(|m| m.id.as_str())
    }

    pub fn load_ids(&self) -> impl Iterator<Item = &str> {
        self.loads.iter().map(|l| l.id.as_str())
    }

    pub fn load_is_inductive(&self, k: usize) -> bool {
        self.loads[k].inductive
    }

    /// Index of a state by name (`bus5.v.a`, `L45.i.b`, `G2.speed`, ...).
    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.state_names().iter().position(|n| n == name)
    }

    pub fn state_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.dim()];
        for (b, id) in self.bus_ids.iter().enumerate() {
            for (ph, p) in PHASES.iter().enumerate() {
                names[self.layout.bus_v(b, ph)] = format!("bus{id}.v.{p}");
            }
        }
        for (k, br) in self.branches.iter().enumerate() {
            for (ph, p) in PHASES.iter().enumerate() {
                names[self.layout.branch_i(k, ph)] = format!("{}.i.{p}", br.id);
            }
        }
        for (g, unit) in self.gens.iter().enumerate() {
            for (j, n) in GEN_STATE_NAMES.iter().enumerate() {
                names[self.layout.gen(g) + j] = format!("{}.{n}", unit.id);
            }
        }
        for (m, unit) in self.motors.iter().enumerate() {
            for (j, n) in MOTOR_STATE_NAMES.iter().enumerate() {
                names[self.layout.motor(m) + j] = format!("{}.{n}", unit.id);
            }
        }
        for (k, unit) in self.loads.iter().enumerate() {
            if let Some(off) = self.layout.load(k) {
                for (ph, p) in PHASES.iter().enumerate() {
                    names[off + ph] = format!("{}.i.{p}", unit.id);
                }
            }
        }
        names
    }

    /// Replace the current state; the clock restarts at `from.t`.
    pub fn set_state(&mut self, from: &SystemState) -> Result<(), EmtError> {
        if from.x.len() != self.dim() {
            return Err(EmtError::Dimension {
                got: from.x.len(),
                want: self.dim(),
            });
        }
        if from.inputs != self.state.inputs {
            self.net = self.linear_jacobian(&from.inputs);
        }
        self.state = from.clone();
        self.origin = from.t;
        self.step_count = 0;
        Ok(())
    }

    fn time_at(&self, k: usize) -> f64 {
        self.origin + k as f64 * self.h
    }

    fn bus_voltages(&self, x: &DVector<f64>, b: usize) -> [f64; 3] {
        let o = self.layout.bus_v(b, 0);
        [x[o], x[o + 1], x[o + 2]]
    }

    /// `ẋ = f(x, t)` for the current inputs.
    fn rhs_impl(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        let mut out = &self.net * x;
        let inp = &self.state.inputs;
        let mut d = [0.0; GEN_STATES];
        for (g, unit) in self.gens.iter().enumerate() {
            let o = self.layout.gen(g);
            let xs = &x.as_slice()[o..o + GEN_STATES];
            let v = self.bus_voltages(x, unit.bus);
            unit.model.deriv(xs, v, t, inp.efd[g], inp.tm[g], &mut d);
            out.rows_mut(o, GEN_STATES).copy_from_slice(&d);
            let inj = unit.model.injection(xs, t);
            for ph in 0..3 {
                out[self.layout.bus_v(unit.bus, ph)] += self.cap_inv[unit.bus] * inj[ph];
            }
        }
        let mut d = [0.0; MOTOR_STATES];
        for (m, unit) in self.motors.iter().enumerate() {
            let o = self.layout.motor(m);
            let xs = &x.as_slice()[o..o + MOTOR_STATES];
            let v = self.bus_voltages(x, unit.bus);
            unit.model.deriv(xs, v, t, inp.tl[m], &mut d);
            out.rows_mut(o, MOTOR_STATES).copy_from_slice(&d);
            let inj = unit.model.injection(xs, t);
            for ph in 0..3 {
                out[self.layout.bus_v(unit.bus, ph)] += self.cap_inv[unit.bus] * inj[ph];
            }
        }
        out
    }

    /// Full Jacobian of `f`: the constant linear part plus finite-difference
    /// machine blocks.
    fn jacobian_impl(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64> {
        let mut j = self.net.clone();
        let inp = &self.state.inputs;
        for (g, unit) in self.gens.iter().enumerate() {
            let m = &unit.model;
            self.device_block(
                &mut j,
                x,
                self.layout.gen(g),
                GEN_STATES,
                unit.bus,
                |xs, v, out| m.deriv(xs, v, t, inp.efd[g], inp.tm[g], out),
                |xs| m.injection(xs, t),
            );
        }
        for (k, unit) in self.motors.iter().enumerate() {
            let m = &unit.model;
            self.device_block(
                &mut j,
                x,
                self.layout.motor(k),
                MOTOR_STATES,
                unit.bus,
                |xs, v, out| m.deriv(xs, v, t, inp.tl[k], out),
                |xs| m.injection(xs, t),
            );
        }
        j
    }

    #[allow(clippy::too_many_arguments)]
    fn device_block(
        &self,
        j: &mut DMatrix<f64>,
        x: &DVector<f64>,
        off: usize,
        n: usize,
        bus: usize,
        deriv: impl Fn(&[f64], [f64; 3], &mut [f64]),
        inj: impl Fn(&[f64]) -> [f64; 3],
    ) {
        let mut xs = x.as_slice()[off..off + n].to_vec();
        let v0 = self.bus_voltages(x, bus);
        let mut d0 = vec![0.0; n];
        let mut d1 = vec![0.0; n];
        deriv(&xs, v0, &mut d0);
        let i0 = inj(&xs);
        let cap = self.cap_inv[bus];
        for c in 0..n {
            let keep = xs[c];
            let delta = 1e-7 * keep.abs().max(1.0);
            xs[c] = keep + delta;
            deriv(&xs, v0, &mut d1);
            let i1 = inj(&xs);
            xs[c] = keep;
            for r in 0..n {
                j[(off + r, off + c)] = (d1[r] - d0[r]) / delta;
            }
            for ph in 0..3 {
                j[(self.layout.bus_v(bus, ph), off + c)] += cap * (i1[ph] - i0[ph]) / delta;
            }
        }
        for ph in 0..3 {
            let mut v = v0;
            let delta = 1e-7 * v[ph].abs().max(1.0);
            v[ph] += delta;
            deriv(&xs, v, &mut d1);
            for r in 0..n {
                j[(off + r, self.layout.bus_v(bus, ph))] = (d1[r] - d0[r]) / delta;
            }
        }
    }

    /// Advance one trapezoidal step.
    pub fn step(&mut self) -> Result<(), EmtError> {
        let k = self.step_count;
        let (t0, t1) = (self.time_at(k), self.time_at(k + 1));
        let x1 = integrate::trapezoidal_step(self, &self.state.x, t0, t1, &self.options)
            .map_err(|e| e.at_step(k + 1))?;
        self.state.x = x1;
        self.step_count += 1;
        self.state.t = t1;
        Ok(())
    }

    /// Replace the next step by two half-length backward-Euler steps.
    pub fn handle_first_step_discontinuity(&mut self) -> Result<(), EmtError> {
        let k = self.step_count;
        let (t0, t1) = (self.time_at(k), self.time_at(k + 1));
        let x1 = integrate::backward_euler_halves(self, &self.state.x, t0, t1, &self.options)
            .map_err(|e| e.at_step(k + 1))?;
        self.state.x = x1;
        self.step_count += 1;
        self.state.t = t1;
        Ok(())
    }

    fn first_step(&mut self) -> Result<(), EmtError> {
        match self.options.first_step {
            DiscontinuityTreatment::Off => self.step(),
            DiscontinuityTreatment::BackwardEuler => self.handle_first_step_discontinuity(),
        }
    }

    /// Phase currents of every device in its own convention (generators
    /// delivering, motors and loads consuming).
    pub fn device_currents(&self, x: &DVector<f64>, t: f64) -> Vec<(DeviceKind, usize, [f64; 3])> {
        let inp = &self.state.inputs;
        let mut out = Vec::with_capacity(self.gens.len() + self.motors.len() + self.loads.len());
        for (g, unit) in self.gens.iter().enumerate() {
            let o = self.layout.gen(g);
            out.push((
                DeviceKind::Generator,
                g,
                unit.model.injection(&x.as_slice()[o..o + GEN_STATES], t),
            ));
        }
        for (m, unit) in self.motors.iter().enumerate() {
            let o = self.layout.motor(m);
            let i = unit.model.injection(&x.as_slice()[o..o + MOTOR_STATES], t);
            out.push((DeviceKind::Motor, m, i.map(|v| -v)));
        }
        for (k, unit) in self.loads.iter().enumerate() {
            let i = match self.layout.load(k) {
                Some(o) => [x[o], x[o + 1], x[o + 2]],
                None => {
                    let v = self.bus_voltages(x, unit.bus);
                    [0, 1, 2].map(|ph| v[ph] / inp.load_r[k][ph])
                }
            };
            out.push((DeviceKind::Load, k, i));
        }
        out
    }

    fn device_bus(&self, kind: DeviceKind, k: usize) -> usize {
        match kind {
            DeviceKind::Generator => self.gens[k].bus,
            DeviceKind::Motor => self.motors[k].bus,
            DeviceKind::Load => self.loads[k].bus,
        }
    }

    fn device_id(&self, kind: DeviceKind, k: usize) -> &str {
        match kind {
            DeviceKind::Generator => &self.gens[k].id,
            DeviceKind::Motor => &self.motors[k].id,
            DeviceKind::Load => &self.loads[k].id,
        }
    }

    /// Simulate one nominal period from `from` and record every device's
    /// terminal waveforms at steps `1..=N`. The system itself is untouched.
    pub fn run_period(&self, from: &SystemState) -> Result<TrajectoryRecord, EmtError> {
        let mut sys = self.clone();
        sys.set_state(from)?;
        let n = sys.steps;
        let devices = sys.device_currents(&from.x, from.t);
        let mut waves: Vec<DeviceWaves> = devices
            .iter()
            .map(|(kind, k, _)| {
                DeviceWaves::new(
                    sys.device_id(*kind, *k),
                    *kind,
                    sys.device_bus(*kind, *k),
                    n,
                )
            })
            .collect();
        for step in 0..n {
            if step == 0 {
                sys.first_step()?;
            } else {
                sys.step()?;
            }
            let x = &sys.state.x;
            let t = sys.state.t;
            for (w, (kind, k, i)) in waves.iter_mut().zip(sys.device_currents(x, t)) {
                let v = sys.bus_voltages(x, sys.device_bus(kind, k));
                w.push(v, i);
            }
        }
        Ok(TrajectoryRecord {
            t0: from.t,
            h: sys.h,
            steps: n,
            start: from.clone(),
            end: sys.state.clone(),
            waves,
        })
    }

    /// Free run over `periods` nominal periods, keeping every step's state.
    pub fn simulate(&self, from: &SystemState, periods: usize) -> Result<StateHistory, EmtError> {
        let mut sys = self.clone();
        sys.set_state(from)?;
        let total = periods * sys.steps;
        let mut hist = StateHistory::with_capacity(total + 1, sys.steps);
        hist.push(from.t, from.x.clone());
        for step in 0..total {
            if step == 0 {
                sys.first_step()?;
            } else {
                sys.step()?;
            }
            hist.push(sys.state.t, sys.state.x.clone());
        }
        Ok(hist)
    }

    /// Value of a state (`G2.speed`) or a device phase current (`M5.i.a`)
    /// at state `x`, time `t`.
    pub fn quantity(&self, name: &str, x: &DVector<f64>, t: f64) -> Option<f64> {
        if let Some(i) = self.state_index(name) {
            return Some(x[i]);
        }
        let (dev, rest) = name.split_once('.')?;
        let ph = match rest {
            "i.a" => 0,
            "i.b" => 1,
            "i.c" => 2,
            _ => return None,
        };
        self.device_currents(x, t)
            .into_iter()
            .find(|(kind, k, _)| self.device_id(*kind, *k) == dev)
            .map(|(_, _, i)| i[ph])
    }
}

impl integrate::Dynamics for System {
    fn rhs(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        self.rhs_impl(x, t)
    }

    fn jacobian(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64> {
        self.jacobian_impl(x, t)
    }

    fn omega0(&self) -> f64 {
        self.omega_b
    }

    /// Unbalance reaches rotating-frame machine states at twice the
    /// network frequency; the motor angle is a ramp.
    fn warp_frequency(&self, i: usize) -> f64 {
        let l = &self.layout;
        let gens = l.gen_start..l.gen_start + GEN_STATES * l.n_gens;
        let motors = l.motor_start..l.motor_start + MOTOR_STATES * l.n_motors;
        if gens.contains(&i) {
            2.0 * self.omega_b
        } else if motors.contains(&i) {
            if (i - l.motor_start) % MOTOR_STATES == induction::ROTOR_ANGLE {
                0.0
            } else {
                2.0 * self.omega_b
            }
        } else {
            self.omega_b
        }
    }
}
