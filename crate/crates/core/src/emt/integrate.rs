//! Implicit one-step integrators for `ẋ = f(x, t)`.

use nalgebra::{DMatrix, DVector};

use super::{EmtError, StepOptions};

pub trait Dynamics {
    fn rhs(&self, x: &DVector<f64>, t: f64) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64>;
    /// Nominal frequency, rad/s.
    fn omega0(&self) -> f64;
    /// Frequency state `i` is prewarped to, rad/s; zero leaves it unwarped.
    fn warp_frequency(&self, _i: usize) -> f64 {
        self.omega0()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepFailure {
    NonFinite,
    Stalled(f64),
    Singular,
}

impl StepFailure {
    pub fn at_step(self, step: usize) -> EmtError {
        match self {
            StepFailure::NonFinite => EmtError::NonFinite { step },
            StepFailure::Stalled(correction) => EmtError::Stalled { step, correction },
            StepFailure::Singular => EmtError::Singular { step },
        }
    }
}

/// Trapezoidal weight for a step of length `h`.
pub fn trapezoid_coefficient(omega0: f64, h: f64, prewarp: bool) -> f64 {
    if prewarp && omega0 > 0.0 {
        (omega0 * h / 2.0).tan() / omega0
    } else {
        h / 2.0
    }
}

/// Per-state trapezoidal weights for a step of length `h`.
pub fn trapezoid_weights<D: Dynamics + ?Sized>(
    sys: &D,
    n: usize,
    h: f64,
    prewarp: bool,
) -> DVector<f64> {
    DVector::from_fn(n, |i, _| {
        trapezoid_coefficient(sys.warp_frequency(i), h, prewarp)
    })
}

/// Solve `x = c + diag(a)·f(x, t)` by Newton iteration from `guess`, with
/// the Jacobian evaluated once at `guess`.
pub fn implicit_solve<D: Dynamics + ?Sized>(
    sys: &D,
    c: &DVector<f64>,
    a: &DVector<f64>,
    t: f64,
    guess: DVector<f64>,
    opts: &StepOptions,
) -> Result<DVector<f64>, StepFailure> {
    let n = guess.len();
    let mut m = sys.jacobian(&guess, t);
    for i in 0..n {
        m.row_mut(i).scale_mut(-a[i]);
        m[(i, i)] += 1.0;
    }
    let lu = m.lu();
    let mut x = guess;
    let mut last = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let g = &x - c - sys.rhs(&x, t).component_mul(a);
        let dx = lu.solve(&g).ok_or(StepFailure::Singular)?;
        x -= &dx;
        let corr = dx.amax();
        if !corr.is_finite() || !x.iter().all(|v| v.is_finite()) {
            return Err(StepFailure::NonFinite);
        }
        let scale = x.amax().max(1.0);
        // accept once the correction reaches rounding level and stops shrinking
        if corr <= opts.tolerance * scale || (corr >= last && corr <= 1e-11 * scale) {
            return Ok(x);
        }
        last = corr;
    }
    Err(StepFailure::Stalled(last))
}

/// `x₁ = x₀ + diag(α)·(f(x₀, t₀) + f(x₁, t₁))`.
pub fn trapezoidal_step<D: Dynamics + ?Sized>(
    sys: &D,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    opts: &StepOptions,
) -> Result<DVector<f64>, StepFailure> {
    let a = trapezoid_weights(sys, x0.len(), t1 - t0, opts.prewarp);
    let step = sys.rhs(x0, t0).component_mul(&a);
    let c = x0 + &step;
    let guess = &c + &step;
    implicit_solve(sys, &c, &a, t1, guess, opts)
}

/// Two backward-Euler steps of half the interval.
pub fn backward_euler_halves<D: Dynamics + ?Sized>(
    sys: &D,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    opts: &StepOptions,
) -> Result<DVector<f64>, StepFailure> {
    let half = 0.5 * (t1 - t0);
    let a = DVector::from_element(x0.len(), half);
    let xm = implicit_solve(sys, x0, &a, t0 + half, x0.clone(), opts)?;
    implicit_solve(sys, &xm.clone(), &a, t1, xm, opts)
}
