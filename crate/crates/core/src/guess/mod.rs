//! Initial guess: power flow, phase expansion and conventional device
//! initialization.
//!
//! Every device is initialized as if its terminal were balanced at the
//! positive-sequence voltage the power flow gives it. Network states are the
//! instantaneous values of the power-flow phasors at `t0 = 0`.

mod powerflow;

use std::f64::consts::SQRT_2;

use nalgebra::DVector;
use num_complex::Complex64;
use thiserror::Error;

use crate::emt::induction::{
    InductionMachine, MotorInit, MotorInitError, MOTOR_STATES, ROTOR_ANGLE,
};
use crate::emt::machine::{SyncInit, SyncMachine, GEN_STATES};
use crate::emt::{Inputs, System, SystemState};
use crate::netlist::{GenSpec, MotorSpec, NetlistError, PfKind, SystemSpec};
use crate::phasor::{positive_sequence, Phasor};

pub(crate) use powerflow::load_phase_targets;
pub use powerflow::{
    admittance_matrix, power_flow, PowerFlowError, PowerFlowOptions, PowerFlowSolution, Refinement,
};

/// Impedance standing in for a phase whose load target is zero.
pub const OPEN_PHASE_IMPEDANCE: f64 = 1e6;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GuessError {
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error("motor {id}: {source}")]
    Motor {
        id: String,
        #[source]
        source: MotorInitError,
    },
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error("system has {got} {what}, spec has {want}")]
    Mismatch {
        what: &'static str,
        got: usize,
        want: usize,
    },
}

/// Closed-form steady state of a synchronous machine delivering `s` at `v`.
pub fn init_sync_machine(
    gen: &GenSpec,
    base_mva: f64,
    omega_b: f64,
    v: Phasor,
    s: Complex64,
) -> SyncInit {
    SyncMachine::new(gen.params(base_mva), omega_b).steady_state(v, s)
}

/// Steady state of an induction motor drawing real power `p` at `v`; the
/// rotor angle is zero.
pub fn init_induction_machine(
    mot: &MotorSpec,
    base_mva: f64,
    omega_b: f64,
    v: Phasor,
    p: f64,
) -> Result<MotorInit, MotorInitError> {
    InductionMachine::new(mot.params(base_mva), omega_b).init_for_power(v, p)
}

/// Series `(R, X)` drawing `s_target` at `v`: `Z = |V|²/S*`. `None` for a
/// zero target.
pub fn init_load(s_target: Complex64, v: Phasor) -> Option<(f64, f64)> {
    if s_target == Complex64::new(0.0, 0.0) {
        return None;
    }
    let z = v.norm_sqr() / s_target.conj();
    Some((z.re, z.im))
}

/// Start state built from a power-flow solution, plus the pinned values of
/// the states held by initial-value conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialGuess {
    pub state: SystemState,
    /// `(state index, y0)`.
    pub pins: Vec<(usize, f64)>,
}

fn instantaneous0(x: Phasor) -> f64 {
    SQRT_2 * x.re
}

/// Fill every state and input of `sys` from the power flow.
pub fn initial_state(
    spec: &SystemSpec,
    sys: &System,
    pf: &PowerFlowSolution,
) -> Result<InitialGuess, GuessError> {
    let check = |what, got: usize, want: usize| {
        if got == want {
            Ok(())
        } else {
            Err(GuessError::Mismatch { what, got, want })
        }
    };
    check("buses", sys.bus_ids.len(), spec.buses.len())?;
    check("generators", sys.gens.len(), spec.generators.len())?;
    check("motors", sys.motors.len(), spec.motors.len())?;
    check("loads", sys.loads.len(), spec.loads.len())?;

    let lay = &sys.layout;
    let mut x = DVector::zeros(sys.dim());
    for (b, v) in pf.phase_v.iter().enumerate() {
        for ph in 0..3 {
            x[lay.bus_v(b, ph)] = instantaneous0(v[ph]);
        }
    }
    for (k, br) in sys.branches.iter().enumerate() {
        let z = Complex64::new(br.r, sys.omega_b / br.l_inv);
        for ph in 0..3 {
            let i = (pf.phase_v[br.from][ph] / br.ratio - pf.phase_v[br.to][ph]) / z;
            x[lay.branch_i(k, ph)] = instantaneous0(i);
        }
    }

    let mut efd = Vec::with_capacity(sys.gens.len());
    let mut tm = Vec::with_capacity(sys.gens.len());
    for (g, unit) in sys.gens.iter().enumerate() {
        let v = positive_sequence(&pf.phase_v[unit.bus]);
        let i = positive_sequence(&pf.gen_current[g]);
        let init = unit.model.steady_state(v, v * i.conj());
        let o = lay.gen(g);
        x.rows_mut(o, GEN_STATES).copy_from_slice(&init.states);
        efd.push(init.efd);
        tm.push(init.tm);
    }

    let mut tl = Vec::with_capacity(sys.motors.len());
    let mut pins = Vec::with_capacity(sys.motors.len());
    for (m, unit) in sys.motors.iter().enumerate() {
        let v = positive_sequence(&pf.phase_v[unit.bus]);
        let p = match spec.condition_for(&unit.id).map(|c| c.kind) {
            Some(PfKind::MotorP { p }) => p,
            _ => (v * positive_sequence(&pf.motor_current[m]).conj()).re,
        };
        let init = unit
            .model
            .init_for_power(v, p)
            .map_err(|source| GuessError::Motor {
                id: unit.id.clone(),
                source,
            })?;
        let o = lay.motor(m);
        x.rows_mut(o, MOTOR_STATES).copy_from_slice(&init.states);
        tl.push(init.tl);
        pins.push((o + ROTOR_ANGLE, init.states[ROTOR_ANGLE]));
    }

    let mut load_r = Vec::with_capacity(sys.loads.len());
    let mut load_x = Vec::with_capacity(sys.loads.len());
    for (k, unit) in sys.loads.iter().enumerate() {
        let v = pf.phase_v[unit.bus];
        let targets = load_phase_targets(spec, k, v.map(|p| p.norm()))?;
        let (mut r, mut xl) = ([0.0; 3], [0.0; 3]);
        for ph in 0..3 {
            let (rp, xp) = init_load(targets[ph] * 3.0, v[ph])
                .unwrap_or((OPEN_PHASE_IMPEDANCE, OPEN_PHASE_IMPEDANCE));
            r[ph] = rp;
            xl[ph] = if unit.inductive { xp } else { 0.0 };
        }
        if let Some(o) = lay.load(k) {
            for ph in 0..3 {
                x[o + ph] = instantaneous0(v[ph] / Complex64::new(r[ph], xl[ph]));
            }
        }
        load_r.push(r);
        load_x.push(xl);
    }

    Ok(InitialGuess {
        state: SystemState {
            t: 0.0,
            x,
            inputs: Inputs {
                load_r,
                load_x,
                efd,
                tm,
                tl,
            },
        },
        pins,
    })
}
