//! State indexing and the linear part of the network equations.

use nalgebra::DMatrix;

use super::induction::MOTOR_STATES;
use super::machine::GEN_STATES;
use super::{Inputs, LoadUnit, System};

/// Per-phase series R-L branch; `l_inv = ω_b / x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub l_inv: f64,
    pub ratio: f64,
}

/// Offsets of each state group in the system state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    pub n_buses: usize,
    pub n_branches: usize,
    pub(crate) gen_start: usize,
    pub(crate) n_gens: usize,
    pub(crate) motor_start: usize,
    pub(crate) n_motors: usize,
    load_offsets: Vec<Option<usize>>,
    pub dim: usize,
}

impl StateLayout {
    pub(crate) fn new(
        n_buses: usize,
        n_branches: usize,
        n_gens: usize,
        n_motors: usize,
        loads: &[LoadUnit],
    ) -> Self {
        let gen_start = 3 * (n_buses + n_branches);
        let motor_start = gen_start + GEN_STATES * n_gens;
        let mut next = motor_start + MOTOR_STATES * n_motors;
        let load_offsets = loads
            .iter()
            .map(|l| {
                l.inductive.then(|| {
                    next += 3;
                    next - 3
                })
            })
            .collect();
        StateLayout {
            n_buses,
            n_branches,
            gen_start,
            n_gens,
            motor_start,
            n_motors,
            load_offsets,
            dim: next,
        }
    }

    pub fn bus_v(&self, bus: usize, phase: usize) -> usize {
        3 * bus + phase
    }

    pub fn branch_i(&self, branch: usize, phase: usize) -> usize {
        3 * (self.n_buses + branch) + phase
    }

    pub fn gen(&self, g: usize) -> usize {
        debug_assert!(g < self.n_gens);
        self.gen_start + GEN_STATES * g
    }

    pub fn motor(&self, m: usize) -> usize {
        debug_assert!(m < self.n_motors);
        self.motor_start + MOTOR_STATES * m
    }

    /// First inductor-current state of load `k`, if it has one.
    pub fn load(&self, k: usize) -> Option<usize> {
        self.load_offsets[k]
    }
}

impl System {
    /// Jacobian of the branch, load and bus-capacitor equations, which are
    /// linear for fixed load impedances.
    pub(crate) fn linear_jacobian(&self, inputs: &Inputs) -> DMatrix<f64> {
        let lay = &self.layout;
        let mut j = DMatrix::zeros(lay.dim, lay.dim);
        for (k, br) in self.branches.iter().enumerate() {
            for ph in 0..3 {
                let row = lay.branch_i(k, ph);
                let (vf, vt) = (lay.bus_v(br.from, ph), lay.bus_v(br.to, ph));
                j[(row, vf)] += br.l_inv / br.ratio;
                j[(row, vt)] -= br.l_inv;
                j[(row, row)] -= br.l_inv * br.r;
                j[(vf, row)] -= self.cap_inv[br.from] / br.ratio;
                j[(vt, row)] += self.cap_inv[br.to];
            }
        }
        for (k, load) in self.loads.iter().enumerate() {
            for ph in 0..3 {
                let v = lay.bus_v(load.bus, ph);
                let r = inputs.load_r[k][ph];
                match lay.load(k) {
                    Some(o) => {
                        let row = o + ph;
                        let l_inv = self.omega_b / inputs.load_x[k][ph];
                        j[(row, v)] += l_inv;
                        j[(row, row)] -= l_inv * r;
                        j[(v, row)] -= self.cap_inv[load.bus];
                    }
                    None => j[(v, v)] -= self.cap_inv[load.bus] / r,
                }
            }
        }
        j
    }
}
