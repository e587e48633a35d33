//! Synchronous machine: stator, field, one d-axis and two q-axis damper
//! windings, flux linkages as states, generator current convention.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;

use super::{inv_park, park};
use crate::netlist::GenParams;

/// State order: `ψd, ψq, ψfd, ψ1d, ψ1q, ψ2q, ω, δ`.
pub const GEN_STATES: usize = 8;
pub const GEN_STATE_NAMES: [&str; GEN_STATES] = [
    "psi_d", "psi_q", "psi_fd", "psi_1d", "psi_1q", "psi_2q", "speed", "angle",
];
pub const SPEED: usize = 6;
pub const ANGLE: usize = 7;

/// Equivalent-circuit form of the machine on the system base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncMachine {
    pub p: GenParams,
    pub omega_b: f64,
    pub xad: f64,
    pub xaq: f64,
    pub xfd: f64,
    pub x1d: f64,
    pub x1q: f64,
    pub x2q: f64,
    pub rfd: f64,
    pub r1d: f64,
    pub r1q: f64,
    pub r2q: f64,
    xmd_pp: f64,
    xmq_pp: f64,
}

/// Winding currents, generator convention on the stator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Currents {
    pub id: f64,
    pub iq: f64,
    pub ifd: f64,
    pub i1d: f64,
    pub i1q: f64,
    pub i2q: f64,
}

/// Closed-form steady state at rated speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncInit {
    pub states: [f64; GEN_STATES],
    pub efd: f64,
    pub tm: f64,
}

impl SyncMachine {
    pub fn new(p: GenParams, omega_b: f64) -> Self {
        let xad = p.xd - p.xl;
        let xaq = p.xq - p.xl;
        let xfd = xad * (p.xd_t - p.xl) / (p.xd - p.xd_t);
        let x1d = 1.0 / (1.0 / (p.xd_st - p.xl) - 1.0 / xad - 1.0 / xfd);
        let x1q = xaq * (p.xq_t - p.xl) / (p.xq - p.xq_t);
        let x2q = 1.0 / (1.0 / (p.xq_st - p.xl) - 1.0 / xaq - 1.0 / x1q);
        let rfd = (xad + xfd) / (omega_b * p.td0_t);
        let r1d = (x1d + xad * xfd / (xad + xfd)) / (omega_b * p.td0_st);
        let r1q = (xaq + x1q) / (omega_b * p.tq0_t);
        let r2q = (x2q + xaq * x1q / (xaq + x1q)) / (omega_b * p.tq0_st);
        let xmd_pp = 1.0 / (1.0 / xad + 1.0 / p.xl + 1.0 / xfd + 1.0 / x1d);
        let xmq_pp = 1.0 / (1.0 / xaq + 1.0 / p.xl + 1.0 / x1q + 1.0 / x2q);
        SyncMachine {
            p,
            omega_b,
            xad,
            xaq,
            xfd,
            x1d,
            x1q,
            x2q,
            rfd,
            r1d,
            r1q,
            r2q,
            xmd_pp,
            xmq_pp,
        }
    }

    pub fn currents(&self, x: &[f64]) -> Currents {
        let xl = self.p.xl;
        let psi_md = self.xmd_pp * (x[0] / xl + x[2] / self.xfd + x[3] / self.x1d);
        let psi_mq = self.xmq_pp * (x[1] / xl + x[4] / self.x1q + x[5] / self.x2q);
        Currents {
            id: (psi_md - x[0]) / xl,
            iq: (psi_mq - x[1]) / xl,
            ifd: (x[2] - psi_md) / self.xfd,
            i1d: (x[3] - psi_md) / self.x1d,
            i1q: (x[4] - psi_mq) / self.x1q,
            i2q: (x[5] - psi_mq) / self.x2q,
        }
    }

    /// Park angle of the d axis; `δ` is the q-axis angle.
    pub fn theta(&self, t: f64, delta: f64) -> f64 {
        self.omega_b * t + delta - FRAC_PI_2
    }

    pub fn electrical_torque(&self, x: &[f64]) -> f64 {
        let c = self.currents(x);
        x[0] * c.iq - x[1] * c.id
    }

    /// Time derivatives (per second) for terminal voltages `v`.
    pub fn deriv(&self, x: &[f64], v: [f64; 3], t: f64, efd: f64, tm: f64, out: &mut [f64]) {
        let wb = self.omega_b;
        let c = self.currents(x);
        let (vd, vq) = park(v, self.theta(t, x[ANGLE]));
        let w = x[SPEED];
        let ra = self.p.ra;
        out[0] = wb * (vd + ra * c.id + w * x[1]);
        out[1] = wb * (vq + ra * c.iq - w * x[0]);
        out[2] = wb * (self.rfd / self.xad * efd - self.rfd * c.ifd);
        out[3] = -wb * self.r1d * c.i1d;
        out[4] = -wb * self.r1q * c.i1q;
        out[5] = -wb * self.r2q * c.i2q;
        let te = x[0] * c.iq - x[1] * c.id;
        out[SPEED] = (tm - te - self.p.d * (w - 1.0)) / (2.0 * self.p.h);
        out[ANGLE] = wb * (w - 1.0);
    }

    /// Phase currents injected into the terminal bus.
    pub fn injection(&self, x: &[f64], t: f64) -> [f64; 3] {
        let c = self.currents(x);
        inv_park(c.id, c.iq, self.theta(t, x[ANGLE]))
    }

    /// Rated-speed steady state delivering `s` at terminal phasor `v`.
    pub fn steady_state(&self, v: Complex64, s: Complex64) -> SyncInit {
        let p = &self.p;
        let i = (s / v).conj();
        let e = v + Complex64::new(p.ra, p.xq) * i;
        let delta = e.arg();
        let rot = Complex64::i() * Complex64::from_polar(1.0, -delta);
        let idq = i * rot;
        let vdq = v * rot;
        let (id, iq) = (idq.re, idq.im);
        let vq = vdq.im;
        let efd = vq + p.ra * iq + p.xd * id;
        let ifd = efd / self.xad;
        let psi_d = -p.xd * id + self.xad * ifd;
        let psi_q = -p.xq * iq;
        let psi_md = self.xad * (ifd - id);
        let psi_mq = -self.xaq * iq;
        let psi_fd = self.xfd * ifd + psi_md;
        let te = psi_d * iq - psi_q * id;
        SyncInit {
            states: [psi_d, psi_q, psi_fd, psi_md, psi_mq, psi_mq, 1.0, delta],
            efd,
            tm: te,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{parse_system, WSCC9_UNBALANCED};
    use crate::phasor::{balanced_set, instantaneous};
    use approx::assert_abs_diff_eq;

    fn machine() -> SyncMachine {
        let spec = parse_system(WSCC9_UNBALANCED).unwrap();
        SyncMachine::new(spec.generators[1].params(spec.base_mva), spec.omega_base())
    }

    #[test]
    fn equivalent_circuit_values() {
        let m = machine();
        assert_abs_diff_eq!(m.xad, 1.4963, epsilon = 1e-12);
        assert_abs_diff_eq!(m.xfd, 0.247_4, epsilon = 1e-4);
        assert_abs_diff_eq!(m.x1d, 0.170_6, epsilon = 1e-4);
        assert_abs_diff_eq!(m.x1q, 0.397_7, epsilon = 1e-4);
        assert_abs_diff_eq!(m.x2q, 0.135_9, epsilon = 1e-4);
        // subtransient reactance seen from the stator
        let xdpp = m.p.xl + 1.0 / (1.0 / m.xad + 1.0 / m.xfd + 1.0 / m.x1d);
        assert_abs_diff_eq!(xdpp, m.p.xd_st, epsilon = 1e-12);
        let xqp = m.p.xl + 1.0 / (1.0 / m.xaq + 1.0 / m.x1q);
        assert_abs_diff_eq!(xqp, m.p.xq_t, epsilon = 1e-12);
    }

    #[test]
    fn open_circuit_identity() {
        let m = machine();
        let init = m.steady_state(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        assert_abs_diff_eq!(init.states[ANGLE], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(init.efd, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(init.tm, 0.0, epsilon = 1e-15);
    }

    fn max_derivative(m: &SyncMachine, v: Complex64, s: Complex64) -> f64 {
        let init = m.steady_state(v, s);
        let mut worst = 0.0f64;
        for k in 0..7 {
            let t = k as f64 * 1.3e-3;
            let abc = balanced_set(v).map(|p| instantaneous(p, m.omega_b, t));
            let mut d = [0.0; GEN_STATES];
            m.deriv(&init.states, abc, t, init.efd, init.tm, &mut d);
            worst = d.iter().fold(worst, |a, b| a.max(b.abs()));
        }
        worst
    }

    #[test]
    fn loaded_steady_state_has_zero_derivatives() {
        let m = machine();
        assert!(max_derivative(&m, Complex64::new(1.0, 0.0), Complex64::new(0.8, 0.6)) < 1e-8);
        let v = Complex64::from_polar(1.025, 0.16);
        assert!(max_derivative(&m, v, Complex64::new(1.63, 0.07)) < 1e-8);
    }

    #[test]
    fn injected_current_matches_phasor() {
        let m = machine();
        let v = Complex64::from_polar(1.02, -0.3);
        let s = Complex64::new(0.7, -0.2);
        let init = m.steady_state(v, s);
        let i = (s / v).conj();
        for k in 0..5 {
            let t = k as f64 * 2.1e-3;
            let got = m.injection(&init.states, t);
            let want = balanced_set(i).map(|p| instantaneous(p, m.omega_b, t));
            for ph in 0..3 {
                assert_abs_diff_eq!(got[ph], want[ph], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn lagging_needs_more_excitation() {
        let m = machine();
        let v = Complex64::new(1.0, 0.0);
        let lag = m.steady_state(v, Complex64::new(0.8, 0.4)).efd;
        let lead = m.steady_state(v, Complex64::new(0.8, -0.4)).efd;
        assert!(lag > lead);
    }
}
