//! Finite-difference Newton-GMRES with an optional Broyden-updated right
//! preconditioner.
//!
//! The outer loop takes full Newton steps. Each linear solve builds an
//! Arnoldi basis from directional finite differences of the residual, so one
//! Krylov direction costs exactly one residual evaluation. With
//! preconditioning on, the search directions are `M·Q(:,k)`; `M` starts as
//! the identity and is improved by rank-one secant updates that reuse
//! residuals already computed, so the updates themselves are free.

mod broyden;
mod gmres;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use broyden::{precond_inner_update, precond_outer_update, Preconditioner, UpdateOutcome};
pub use gmres::{
    back_substitute, givens_qr_update, gmres_inner, GmresFailure, GmresOutcome, GmresWorkspace,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioning {
    Off,
    /// Right preconditioning with outer and inner Broyden updates.
    Broyden,
    /// Right preconditioning with `M` held at the identity. Produces the
    /// same iterates as `Off`; exists to check that claim.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Newton convergence threshold on `‖F‖₂`.
    pub tolerance: f64,
    pub maxiter: usize,
    /// GMRES relative tolerance.
    pub reltol: f64,
    /// Finite-difference perturbation.
    pub eps: f64,
    /// Scale `eps` by `max(1, ‖X‖₂)`.
    pub relative_eps: bool,
    pub precondition: Preconditioning,
    /// Krylov dimension cap; `None` means the problem dimension.
    pub m_max: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-6,
            maxiter: 20,
            reltol: 1e-3,
            eps: 1e-4,
            relative_eps: false,
            precondition: Preconditioning::Broyden,
            m_max: None,
        }
    }
}

impl SolverOptions {
    /// Messages for every violated option invariant.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.tolerance > 0.0) {
            out.push(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            ));
        }
        if !(self.reltol > 0.0 && self.reltol < 1.0) {
            out.push(format!("reltol must lie in (0, 1), got {}", self.reltol));
        }
        if !(self.eps > 0.0) {
            out.push(format!("eps must be positive, got {}", self.eps));
        }
        if self.maxiter == 0 {
            out.push("maxiter must be at least 1".to_string());
        }
        if self.m_max == Some(0) {
            out.push("m_max must be at least 1".to_string());
        }
        out
    }

    pub(crate) fn perturbation(&self, x: &DVector<f64>) -> f64 {
        if self.relative_eps {
            self.eps * x.norm().max(1.0)
        } else {
            self.eps
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecantKind {
    Outer,
    Inner,
}

/// Post-update secant error of one Broyden update; `None` when skipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecantCheck {
    pub kind: SecantKind,
    pub newton_iter: usize,
    pub rel_error: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    /// `‖F‖₂` at every iterate, starting with the initial guess.
    pub residual_norms: Vec<f64>,
    /// Cumulative F evaluations when each entry of `residual_norms` was known.
    pub evals_at_iter: Vec<usize>,
    /// Krylov dimension used by each Newton step.
    pub krylov_per_iter: Vec<usize>,
    /// Newton steps whose inner solve stopped at `m_max` above `errtol`.
    pub capped_iters: Vec<usize>,
    pub f_evals: usize,
    pub converged: bool,
    pub iterates: Vec<DVector<f64>>,
    pub secant_checks: Vec<SecantCheck>,
    pub max_orthogonality_loss: f64,
}

impl SolveStats {
    pub fn iterations(&self) -> usize {
        self.krylov_per_iter.len()
    }

    pub fn krylov_iters(&self) -> usize {
        self.krylov_per_iter.iter().sum()
    }

    pub fn final_norm(&self) -> f64 {
        self.residual_norms.last().copied().unwrap_or(f64::NAN)
    }

    /// Largest post-update secant error over all applied updates.
    pub fn max_secant_error(&self) -> f64 {
        self.secant_checks
            .iter()
            .filter_map(|c| c.rel_error)
            .fold(0.0, f64::max)
    }

    /// `iter,residual_2norm,cumulative_F_evals,krylov_iters`, one row per
    /// iterate.
    pub fn write_convergence_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "iter",
            "residual_2norm",
            "cumulative_F_evals",
            "krylov_iters",
        ])?;
        for (i, norm) in self.residual_norms.iter().enumerate() {
            let krylov = if i == 0 {
                0
            } else {
                self.krylov_per_iter[i - 1]
            };
            out.write_record([
                i.to_string(),
                format!("{norm:e}"),
                self.evals_at_iter[i].to_string(),
                krylov.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolverError {
    #[error("zero diagonal entry {0} in the triangular factor")]
    SingularTriangle(usize),
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    pub stats: SolveStats,
}

#[derive(Debug, Error)]
pub enum SolveError<E: std::error::Error + 'static> {
    #[error("residual evaluation failed")]
    Eval {
        #[source]
        source: E,
        x: DVector<f64>,
        stats: SolveStats,
    },
    #[error(transparent)]
    Linear(SolverError),
}

/// Solve `F(X) = 0` from `x0`. Reaching `maxiter` is not an error: the
/// returned stats carry `converged = false`.
pub fn newton_gmres<E, F>(
    mut f: F,
    x0: DVector<f64>,
    opts: &SolverOptions,
) -> Result<Solution, SolveError<E>>
where
    E: std::error::Error + 'static,
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>, E>,
{
    let n = x0.len();
    let mut stats = SolveStats::default();
    let mut x = x0;
    let fail = |source: E, x: &DVector<f64>, stats: &SolveStats| SolveError::Eval {
        source,
        x: x.clone(),
        stats: stats.clone(),
    };

    let mut fx = match f(&x) {
        Ok(v) => v,
        Err(e) => {
            stats.f_evals = 1;
            return Err(fail(e, &x, &stats));
        }
    };
    stats.f_evals = 1;
    stats.residual_norms.push(fx.norm());
    stats.evals_at_iter.push(1);
    stats.iterates.push(x.clone());

    let mut precond = match opts.precondition {
        Preconditioning::Off => None,
        _ => Some(Preconditioner::identity(n)),
    };
    let mut last_step: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut iter = 0;
    loop {
        let rho = fx.norm();
        if rho < opts.tolerance {
            stats.converged = true;
            break;
        }
        if iter >= opts.maxiter {
            break;
        }
        iter += 1;
        if opts.precondition == Preconditioning::Broyden {
            let p = precond.as_mut().expect("preconditioner allocated");
            if let Some((dx, f_prev)) = &last_step {
                p.m = p.m0.clone();
                let df = &fx - f_prev;
                let outcome = precond_outer_update(&mut p.m, dx, &df);
                stats.secant_checks.push(SecantCheck::from_outcome(
                    SecantKind::Outer,
                    iter,
                    outcome,
                ));
            }
            p.m0 = p.m.clone();
        }

        let out = match gmres_inner(&mut f, &x, &fx, opts, precond.as_mut(), iter) {
            Ok(o) => o,
            Err(GmresFailure::Eval { source, f_evals }) => {
                stats.f_evals += f_evals;
                return Err(fail(source, &x, &stats));
            }
            Err(GmresFailure::Solver(e)) => return Err(SolveError::Linear(e)),
        };
        stats.f_evals += out.f_evals;
        stats.krylov_per_iter.push(out.k);
        if out.capped {
            stats.capped_iters.push(iter);
        }
        stats.max_orthogonality_loss = stats.max_orthogonality_loss.max(out.orthogonality_loss);
        stats.secant_checks.extend(out.secant_checks);

        x += &out.dx;
        let f_new = match f(&x) {
            Ok(v) => v,
            Err(e) => {
                stats.f_evals += 1;
                return Err(fail(e, &x, &stats));
            }
        };
        stats.f_evals += 1;
        stats.residual_norms.push(f_new.norm());
        stats.evals_at_iter.push(stats.f_evals);
        stats.iterates.push(x.clone());
        log::info!(
            "newton {iter}: |F| = {:.4e}, krylov {}, F evals {}",
            f_new.norm(),
            out.k,
            stats.f_evals
        );
        let f_prev = std::mem::replace(&mut fx, f_new);
        last_step = Some((out.dx, f_prev));
    }
    Ok(Solution { x, stats })
}

/// Dense Jacobian of `f` at `x` by forward differences; test and diagnostic
/// use only.
pub fn fd_jacobian<E>(
    f: &mut dyn FnMut(&DVector<f64>) -> Result<DVector<f64>, E>,
    x: &DVector<f64>,
    eps: f64,
) -> Result<DMatrix<f64>, E> {
    let f0 = f(x)?;
    let mut j = DMatrix::zeros(f0.len(), x.len());
    for c in 0..x.len() {
        let mut xp = x.clone();
        xp[c] += eps;
        let col = (f(&xp)? - &f0) / eps;
        j.set_column(c, &col);
    }
    Ok(j)
}
