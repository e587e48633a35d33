//! System description: buses, branches, machines, loads, power-flow
//! conditions and solver settings.
//!
//! Machine parameters are stored exactly as written in the netlist (on the
//! machine's own MVA rating); [`GenSpec::params`] and [`MotorSpec::params`]
//! return them converted to the system base. Every other electrical
//! quantity in the file is already per-unit on `base_mva`.

mod parse;
mod validate;

pub use parse::{parse_system, write_system};
pub use validate::{equation_balance, validate, Diagnostic, EquationBalance};

use num_complex::Complex64;
use thiserror::Error;

use crate::solver::SolverOptions;

/// Bundled modified WSCC 9-bus system with an induction motor at Bus 5 and
/// unevenly allocated static loads.
pub const WSCC9_UNBALANCED: &str = include_str!("../../data/wscc9_unbalanced.net");

/// Bundled standard WSCC 9-bus power-flow case (static loads only).
pub const WSCC9_STANDARD: &str = include_str!("../../data/wscc9_standard.net");

/// Resolve a bundled system by name.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "wscc9_unbalanced" => Some(WSCC9_UNBALANCED),
        "wscc9_standard" | "wscc9" => Some(WSCC9_STANDARD),
        _ => None,
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetlistError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("no angle reference device")]
    NoAngleReference,
    #[error("load unbalance factor {0} outside (-1, 1)")]
    AllocationFactor(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub base_mva: f64,
    pub nominal_freq: f64,
    /// Steps per nominal period used by the initialization runs.
    pub init_steps_per_period: usize,
    pub buses: Vec<BusSpec>,
    pub branches: Vec<BranchSpec>,
    pub generators: Vec<GenSpec>,
    pub motors: Vec<MotorSpec>,
    pub loads: Vec<LoadSpec>,
    pub conditions: Vec<PfCondition>,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusSpec {
    pub id: String,
    pub kv: f64,
    /// Shunt susceptance to ground at the bus, p.u.
    pub b_shunt: f64,
}

/// Per-phase series R-L branch with lumped line charging split between the
/// two ends. `ratio` is the off-nominal tap on the `from` side.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub ratio: f64,
}

/// Synchronous generator data, machine base.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub id: String,
    pub bus: String,
    pub mva: f64,
    pub ra: f64,
    pub xl: f64,
    pub xd: f64,
    pub xq: f64,
    pub xd_t: f64,
    pub xq_t: f64,
    pub xd_st: f64,
    pub xq_st: f64,
    pub td0_t: f64,
    pub tq0_t: f64,
    pub td0_st: f64,
    pub tq0_st: f64,
    pub h: f64,
    pub d: f64,
}

/// Generator parameters on the system base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenParams {
    pub ra: f64,
    pub xl: f64,
    pub xd: f64,
    pub xq: f64,
    pub xd_t: f64,
    pub xq_t: f64,
    pub xd_st: f64,
    pub xq_st: f64,
    pub td0_t: f64,
    pub tq0_t: f64,
    pub td0_st: f64,
    pub tq0_st: f64,
    pub h: f64,
    pub d: f64,
}

impl GenSpec {
    pub fn params(&self, base_mva: f64) -> GenParams {
        let z = base_mva / self.mva;
        let m = self.mva / base_mva;
        GenParams {
            ra: self.ra * z,
            xl: self.xl * z,
            xd: self.xd * z,
            xq: self.xq * z,
            xd_t: self.xd_t * z,
            xq_t: self.xq_t * z,
            xd_st: self.xd_st * z,
            xq_st: self.xq_st * z,
            td0_t: self.td0_t,
            tq0_t: self.tq0_t,
            td0_st: self.td0_st,
            tq0_st: self.tq0_st,
            h: self.h * m,
            d: self.d * m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatorConnection {
    FloatingY,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotorSpec {
    pub id: String,
    pub bus: String,
    pub mva: f64,
    pub rs: f64,
    pub xls: f64,
    pub rr: f64,
    pub xlr: f64,
    pub xm: f64,
    pub h: f64,
    pub d: f64,
    pub connection: StatorConnection,
}

/// Induction motor parameters on the system base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorParams {
    pub rs: f64,
    pub xls: f64,
    pub rr: f64,
    pub xlr: f64,
    pub xm: f64,
    pub h: f64,
    pub d: f64,
}

impl MotorSpec {
    pub fn params(&self, base_mva: f64) -> MotorParams {
        let z = base_mva / self.mva;
        let m = self.mva / base_mva;
        MotorParams {
            rs: self.rs * z,
            xls: self.xls * z,
            rr: self.rr * z,
            xlr: self.xlr * z,
            xm: self.xm * z,
            h: self.h * m,
            d: self.d * m,
        }
    }
}

/// Coefficients of a ZIP load: constant power (S), current (I), impedance (Z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZipCoeffs {
    pub k_ps: f64,
    pub k_pi: f64,
    pub k_pz: f64,
    pub k_qs: f64,
    pub k_qi: f64,
    pub k_qz: f64,
}

impl ZipCoeffs {
    pub const CONSTANT_POWER: ZipCoeffs = ZipCoeffs {
        k_ps: 1.0,
        k_pi: 0.0,
        k_pz: 0.0,
        k_qs: 1.0,
        k_qi: 0.0,
        k_qz: 0.0,
    };

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.k_ps, self.k_pi, self.k_pz, self.k_qs, self.k_qi, self.k_qz,
        ]
    }

    pub fn from_array(k: [f64; 6]) -> Self {
        ZipCoeffs {
            k_ps: k[0],
            k_pi: k[1],
            k_pz: k[2],
            k_qs: k[3],
            k_qi: k[4],
            k_qz: k[5],
        }
    }
}

impl Default for ZipCoeffs {
    fn default() -> Self {
        Self::CONSTANT_POWER
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadSpec {
    pub id: String,
    pub bus: String,
    /// Three-phase complex power, p.u.
    pub s_total: Complex64,
    pub zip: ZipCoeffs,
    pub alloc_k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PqScope {
    /// Each phase carries its own target from the unbalanced allocation.
    PerPhase {
        alloc_k: f64,
    },
    PositiveSequence,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PfKind {
    VTheta {
        v: f64,
        theta: f64,
    },
    Pv {
        p: f64,
        v: f64,
    },
    Pq {
        p0: f64,
        q0: f64,
        zip: ZipCoeffs,
        scope: PqScope,
    },
    MotorP {
        p: f64,
    },
}

impl PfKind {
    pub fn name(&self) -> &'static str {
        match self {
            PfKind::VTheta { .. } => "vtheta",
            PfKind::Pv { .. } => "pv",
            PfKind::Pq { .. } => "pq",
            PfKind::MotorP { .. } => "motorp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfCondition {
    pub device: String,
    pub kind: PfKind,
}

/// Which device table an id belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceRef {
    Generator(usize),
    Motor(usize),
    Load(usize),
}

impl SystemSpec {
    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn device(&self, id: &str) -> Option<DeviceRef> {
        if let Some(i) = self.generators.iter().position(|g| g.id == id) {
            return Some(DeviceRef::Generator(i));
        }
        if let Some(i) = self.motors.iter().position(|m| m.id == id) {
            return Some(DeviceRef::Motor(i));
        }
        self.loads
            .iter()
            .position(|l| l.id == id)
            .map(DeviceRef::Load)
    }

    pub fn condition_for(&self, device: &str) -> Option<&PfCondition> {
        self.conditions.iter().find(|c| c.device == device)
    }

    pub fn omega_base(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.nominal_freq
    }

    pub fn period(&self) -> f64 {
        1.0 / self.nominal_freq
    }

    /// Overwrite the unbalance factor of every load and of every per-phase
    /// load condition.
    pub fn set_unbalance(&mut self, k: f64) -> Result<(), NetlistError> {
        if !(k.abs() < 1.0) {
            return Err(NetlistError::AllocationFactor(k));
        }
        for load in &mut self.loads {
            load.alloc_k = k;
        }
        for cond in &mut self.conditions {
            if let PfKind::Pq {
                scope: PqScope::PerPhase { alloc_k },
                ..
            } = &mut cond.kind
            {
                *alloc_k = k;
            }
        }
        Ok(())
    }
}

/// Split a three-phase load over phases A, B, C with unbalance factor `k`:
/// `(1-k)S/3, S/3, (1+k)S/3`.
pub fn allocate_load(s: Complex64, k: f64) -> Result<[Complex64; 3], NetlistError> {
    if !(k.abs() < 1.0) {
        return Err(NetlistError::AllocationFactor(k));
    }
    let third = s / 3.0;
    let a = third * (1.0 - k);
    let c = third * (1.0 + k);
    // phase B takes whatever remains so the shares sum to S without rounding drift
    let b = s - a - c;
    Ok([a, b, c])
}
