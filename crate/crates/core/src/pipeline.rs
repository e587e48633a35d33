//! End-to-end runs: parse-validated spec → guess → Newton-GMRES, and free
//! simulation from a converged start state.

use nalgebra::DVector;
use thiserror::Error;

use crate::emt::{build_system, EmtError, StateHistory, StepOptions, System, SystemState};
use crate::guess::{initial_state, power_flow, GuessError, PowerFlowOptions, PowerFlowSolution};
use crate::netlist::{validate, Diagnostic, SystemSpec};
use crate::shooting::{ResidualReport, ShootingError, ShootingProblem};
use crate::solver::{newton_gmres, SolveError, SolveStats, SolverOptions};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid system: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error("invalid solver options: {}", .0.join("; "))]
    Options(Vec<String>),
    #[error(transparent)]
    Simulation(#[from] EmtError),
    #[error(transparent)]
    Guess(#[from] GuessError),
    #[error(transparent)]
    Shooting(#[from] ShootingError),
    #[error("solve failed after {} residual evaluations: {source}", .stats.f_evals)]
    Solve {
        #[source]
        source: SolveError<ShootingError>,
        stats: SolveStats,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InitConfig {
    /// Integration steps per nominal period; the spec's value when `None`.
    pub steps_per_period: Option<usize>,
    /// The spec's solver options when `None`.
    pub solver: Option<SolverOptions>,
    pub power_flow: PowerFlowOptions,
    pub step: StepOptions,
}

/// Everything needed before the nonlinear solve.
#[derive(Debug)]
pub struct Prepared {
    pub problem: ShootingProblem,
    pub power_flow: PowerFlowSolution,
    pub x0: DVector<f64>,
}

#[derive(Debug)]
pub struct InitOutcome {
    pub problem: ShootingProblem,
    pub power_flow: PowerFlowSolution,
    pub x0: DVector<f64>,
    pub x: DVector<f64>,
    pub stats: SolveStats,
    /// Start state at the final iterate.
    pub state: SystemState,
}

impl InitOutcome {
    /// Residual report at the final iterate; counts as one more evaluation.
    pub fn final_report(&self) -> Result<ResidualReport, ShootingError> {
        self.problem.evaluate(&self.x)
    }

    /// `(name, value)` of every unknown at the final iterate.
    pub fn named_solution(&self) -> Vec<(String, f64)> {
        self.problem
            .layout
            .names
            .iter()
            .cloned()
            .zip(self.x.iter().copied())
            .collect()
    }
}

/// Validate, build the system, run the power flow and assemble `X0`.
pub fn prepare(spec: &SystemSpec, cfg: &InitConfig) -> Result<Prepared, PipelineError> {
    let diags = validate(spec);
    if !diags.is_empty() {
        return Err(PipelineError::Invalid(diags));
    }
    let n = cfg.steps_per_period.unwrap_or(spec.init_steps_per_period);
    let mut system = build_system(spec, spec.period() / n as f64)?;
    system.options = cfg.step;
    let pf = power_flow(spec, &cfg.power_flow).map_err(GuessError::from)?;
    let guess = initial_state(spec, &system, &pf)?;
    let problem = ShootingProblem::new(spec, system, &guess)?;
    let x0 = problem.pack(&guess.state);
    Ok(Prepared {
        problem,
        power_flow: pf,
        x0,
    })
}

/// Full initialization. Non-convergence within `maxiter` is reported in
/// `stats.converged`, not as an error.
pub fn initialize(spec: &SystemSpec, cfg: &InitConfig) -> Result<InitOutcome, PipelineError> {
    let opts = cfg.solver.clone().unwrap_or_else(|| spec.solver.clone());
    let bad = opts.check();
    if !bad.is_empty() {
        return Err(PipelineError::Options(bad));
    }
    let prep = prepare(spec, cfg)?;
    let problem = prep.problem;
    let sol = newton_gmres(|x| problem.residual(x), prep.x0.clone(), &opts).map_err(|source| {
        let stats = match &source {
            SolveError::Eval { stats, .. } => stats.clone(),
            SolveError::Linear(_) => SolveStats::default(),
        };
        PipelineError::Solve { source, stats }
    })?;
    let state = problem.apply_unknowns(&sol.x)?;
    Ok(InitOutcome {
        problem,
        power_flow: prep.power_flow,
        x0: prep.x0,
        x: sol.x,
        stats: sol.stats,
        state,
    })
}

/// System at the step nearest `step` that divides the period evenly.
pub fn simulation_system(
    spec: &SystemSpec,
    step: f64,
    opts: StepOptions,
) -> Result<System, EmtError> {
    let n = (spec.period() / step).round().max(1.0);
    let mut sys = build_system(spec, spec.period() / n)?;
    sys.options = opts;
    Ok(sys)
}

/// Free run of `periods` nominal periods from `start`.
pub fn simulate(
    spec: &SystemSpec,
    start: &SystemState,
    step: f64,
    periods: usize,
    opts: StepOptions,
) -> Result<(System, StateHistory), EmtError> {
    let sys = simulation_system(spec, step, opts)?;
    let hist = sys.simulate(start, periods)?;
    Ok((sys, hist))
}
