//! Newton-GMRES on a small nonlinear system, with and without the Broyden
//! preconditioner.

use emt_init::solver::{newton_gmres, Preconditioning, SolverOptions};
use nalgebra::DVector;

/// Discretised `u'' = eᵘ` on (0, 1) with zero boundary values.
fn bratu(u: &DVector<f64>) -> Result<DVector<f64>, std::convert::Infallible> {
    let n = u.len();
    let h = 1.0 / (n + 1) as f64;
    Ok(DVector::from_fn(n, |i, _| {
        let left = if i > 0 { u[i - 1] } else { 0.0 };
        let right = if i + 1 < n { u[i + 1] } else { 0.0 };
        (left - 2.0 * u[i] + right) / (h * h) - u[i].exp()
    }))
}

fn main() {
    let x0 = DVector::zeros(40);
    for precondition in [Preconditioning::Off, Preconditioning::Broyden] {
        let opts = SolverOptions {
            tolerance: 1e-8,
            reltol: 1e-4,
            eps: 1e-7,
            precondition,
            ..SolverOptions::default()
        };
        let sol = newton_gmres(bratu, x0.clone(), &opts).unwrap();
        println!(
            "{precondition:?}: converged {} in {} iterations, {} F evaluations, ‖F‖ {:.2e}",
            sol.stats.converged,
            sol.stats.iterations(),
            sol.stats.f_evals,
            sol.stats.final_norm()
        );
    }
}
