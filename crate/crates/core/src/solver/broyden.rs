//! Rank-one Broyden updates of the right preconditioner.

use nalgebra::{DMatrix, DVector};

/// Result of a secant update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateOutcome {
    /// Update applied; carries `‖M·ΔF − ΔX‖ / ‖ΔX‖` measured afterwards.
    Applied { secant_error: f64 },
    /// Denominator too small relative to `‖ΔX‖·‖M·ΔF‖`.
    Skipped,
}

/// Dense right preconditioner pair: `m` is applied in GMRES, `m0` collects
/// the inner updates made during one linear solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    pub m: DMatrix<f64>,
    pub m0: DMatrix<f64>,
}

impl Preconditioner {
    pub fn identity(n: usize) -> Self {
        Preconditioner {
            m: DMatrix::identity(n, n),
            m0: DMatrix::identity(n, n),
        }
    }
}

/// `M ← M + (dx − M·df)·(dxᵀM) / (dxᵀ·M·df)`, after which `M·df = dx`.
fn secant_update(m: &mut DMatrix<f64>, dx: &DVector<f64>, df: &DVector<f64>) -> UpdateOutcome {
    let m_df = &*m * df;
    let row = m.tr_mul(dx);
    let denom = row.dot(df);
    let scale = dx.norm() * m_df.norm();
    if !(denom.abs() >= 1e-14 * scale) || scale == 0.0 {
        log::debug!("secant update skipped: denominator {denom:.3e}, scale {scale:.3e}");
        return UpdateOutcome::Skipped;
    }
    let u = (dx - &m_df) / denom;
    m.ger(1.0, &u, &row, 1.0);
    let secant_error = (&*m * df - dx).norm() / dx.norm();
    UpdateOutcome::Applied { secant_error }
}

/// Outer update from a completed Newton step: `ΔX` and `ΔF = F(X) − F(X−ΔX)`.
pub fn precond_outer_update(
    m: &mut DMatrix<f64>,
    dx: &DVector<f64>,
    df: &DVector<f64>,
) -> UpdateOutcome {
    secant_update(m, dx, df)
}

/// Inner update from one directional evaluation: `εz̄` and
/// `ΔF = F(X+εz̄) − F(X)`.
pub fn precond_inner_update(
    m0: &mut DMatrix<f64>,
    eps_z: &DVector<f64>,
    df: &DVector<f64>,
) -> UpdateOutcome {
    secant_update(m0, eps_z, df)
}
