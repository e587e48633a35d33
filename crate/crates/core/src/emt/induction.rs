//! Squirrel-cage induction motor in the synchronous reference frame, motor
//! current convention, floating-wye stator.

use num_complex::Complex64;
use thiserror::Error;

use super::{inv_park, park};
use crate::netlist::MotorParams;

/// State order: `ψds, ψqs, ψdr, ψqr, ωr, θr`.
pub const MOTOR_STATES: usize = 6;
pub const MOTOR_STATE_NAMES: [&str; MOTOR_STATES] = [
    "psi_ds",
    "psi_qs",
    "psi_dr",
    "psi_qr",
    "speed",
    "rotor_angle",
];
pub const SPEED: usize = 4;
pub const ROTOR_ANGLE: usize = 5;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MotorInitError {
    #[error("requested power {requested:.6} p.u. outside the feasible range [{min:.6}, {max:.6}] at |V| = {v_mag:.6}")]
    Infeasible {
        requested: f64,
        min: f64,
        max: f64,
        v_mag: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InductionMachine {
    pub p: MotorParams,
    pub omega_b: f64,
    xss: f64,
    xrr: f64,
    det: f64,
}

/// Steady state at a given slip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorInit {
    pub states: [f64; MOTOR_STATES],
    pub slip: f64,
    pub tl: f64,
    /// Stator current phasor drawn from the bus.
    pub current: Complex64,
}

impl InductionMachine {
    pub fn new(p: MotorParams, omega_b: f64) -> Self {
        let xss = p.xls + p.xm;
        let xrr = p.xlr + p.xm;
        InductionMachine {
            p,
            omega_b,
            xss,
            xrr,
            det: xss * xrr - p.xm * p.xm,
        }
    }

    /// `(ids, iqs, idr, iqr)` from the flux states.
    pub fn currents(&self, x: &[f64]) -> [f64; 4] {
        let xm = self.p.xm;
        [
            (self.xrr * x[0] - xm * x[2]) / self.det,
            (self.xrr * x[1] - xm * x[3]) / self.det,
            (self.xss * x[2] - xm * x[0]) / self.det,
            (self.xss * x[3] - xm * x[1]) / self.det,
        ]
    }

    pub fn theta(&self, t: f64) -> f64 {
        self.omega_b * t
    }

    pub fn electrical_torque(&self, x: &[f64]) -> f64 {
        let i = self.currents(x);
        x[0] * i[1] - x[1] * i[0]
    }

    pub fn deriv(&self, x: &[f64], v: [f64; 3], t: f64, tl: f64, out: &mut [f64]) {
        let wb = self.omega_b;
        let [ids, iqs, idr, iqr] = self.currents(x);
        let (vd, vq) = park(v, self.theta(t));
        let slip = 1.0 - x[SPEED];
        out[0] = wb * (vd - self.p.rs * ids + x[1]);
        out[1] = wb * (vq - self.p.rs * iqs - x[0]);
        out[2] = wb * (-self.p.rr * idr + slip * x[3]);
        out[3] = wb * (-self.p.rr * iqr - slip * x[2]);
        let te = x[0] * iqs - x[1] * ids;
        out[SPEED] = (te - tl - self.p.d * (x[SPEED] - 1.0)) / (2.0 * self.p.h);
        out[ROTOR_ANGLE] = wb * (x[SPEED] - 1.0);
    }

    /// Phase currents injected into the terminal bus (negative of the
    /// stator currents drawn).
    pub fn injection(&self, x: &[f64], t: f64) -> [f64; 3] {
        let i = self.currents(x);
        inv_park(-i[0], -i[1], self.theta(t))
    }

    /// Steady state at slip `s` for positive-sequence terminal phasor `v`.
    pub fn steady_state(&self, v: Complex64, s: f64) -> MotorInit {
        let p = &self.p;
        let j = Complex64::i();
        let zs = Complex64::new(p.rs, self.xss);
        // rotor current per unit stator current
        let kr = if s == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            -j * p.xm / Complex64::new(p.rr / s, self.xrr)
        };
        let is = v / (zs + j * p.xm * kr);
        let ir = kr * is;
        let psi_s = self.xss * is + p.xm * ir;
        let psi_r = p.xm * is + self.xrr * ir;
        let te = (psi_s.conj() * is).im;
        MotorInit {
            states: [psi_s.re, psi_s.im, psi_r.re, psi_r.im, 1.0 - s, 0.0],
            slip: s,
            tl: te + p.d * s,
            current: is,
        }
    }

    /// Real power drawn at slip `s`.
    pub fn power_at_slip(&self, v: Complex64, s: f64) -> f64 {
        (v * self.steady_state(v, s).current.conj()).re
    }

    /// Slip at which the drawn real power peaks, found on `(0, 1]`.
    fn pull_out_slip(&self, v: Complex64) -> f64 {
        let (mut a, mut b) = (1e-9, 1.0);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if self.power_at_slip(v, c) > self.power_at_slip(v, d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    /// Bisection on slip so the drawn real power equals `p`. The search
    /// spans both pull-out slips, so a power below the no-load stator loss
    /// gives a slightly negative slip.
    pub fn init_for_power(&self, v: Complex64, p: f64) -> Result<MotorInit, MotorInitError> {
        let s_po = self.pull_out_slip(v);
        let (p_min, p_max) = (self.power_at_slip(v, -s_po), self.power_at_slip(v, s_po));
        if !(p >= p_min && p <= p_max) {
            return Err(MotorInitError::Infeasible {
                requested: p,
                min: p_min,
                max: p_max,
                v_mag: v.norm(),
            });
        }
        let (mut lo, mut hi) = (-s_po, s_po);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.power_at_slip(v, mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-17 * s_po {
                break;
            }
        }
        Ok(self.steady_state(v, 0.5 * (lo + hi)))
    }
}
