//! Steady-state initialization of multiphase electromagnetic transient
//! simulations.
//!
//! The initialization is posed as a shooting problem: the unknown vector
//! holds every dynamic state at `t0`, the dependent device parameters (load
//! impedances) and the constant external inputs (field voltages, mechanical
//! and load torques). One residual evaluation simulates a single nominal
//! period and compares the end state with the start state, together with
//! the power-flow conditions measured on the simulated waveforms. The
//! residual is driven to zero by a finite-difference Newton-GMRES solver
//! with an optional Broyden-updated right preconditioner.
//!
//! ```
//! use emt_init::pipeline::{initialize, InitConfig};
//!
//! let spec = emt_init::netlist::parse_system(emt_init::netlist::WSCC9_UNBALANCED).unwrap();
//! let outcome = initialize(&spec, &InitConfig::default()).unwrap();
//! assert!(outcome.stats.converged);
//! ```

pub mod cli;
pub mod emt;
pub mod guess;
pub mod netlist;
pub mod phasor;
pub mod pipeline;
pub mod report;
pub mod shooting;
pub mod solver;
