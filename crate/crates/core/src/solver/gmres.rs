//! Inner GMRES iteration with finite-difference directional derivatives.

use nalgebra::{DMatrix, DVector};

use super::broyden::{precond_inner_update, Preconditioner, UpdateOutcome};
use super::{SecantCheck, SecantKind, SolverError, SolverOptions};

/// Arnoldi basis, Hessenberg matrix and Givens state of one linear solve.
#[derive(Debug, Clone)]
pub struct GmresWorkspace {
    pub q: Vec<DVector<f64>>,
    /// Column `j` holds `H(0..=j+1, j)`; rotated in place.
    pub h: DMatrix<f64>,
    pub c: Vec<f64>,
    pub s: Vec<f64>,
    pub g: Vec<f64>,
    pub rho: f64,
}

impl GmresWorkspace {
    fn new(kmax: usize) -> Self {
        GmresWorkspace {
            q: Vec::with_capacity(kmax + 1),
            h: DMatrix::zeros(kmax + 1, kmax.max(1)),
            c: Vec::with_capacity(kmax),
            s: Vec::with_capacity(kmax),
            g: vec![0.0; kmax + 1],
            rho: 0.0,
        }
    }

    /// Largest `|Q(:,i)ᵀQ(:,j)|` over `i ≠ j`.
    pub fn orthogonality_loss(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.q.len() {
            for j in 0..i {
                worst = worst.max(self.q[i].dot(&self.q[j]).abs());
            }
        }
        worst
    }
}

/// Outcome of one inner solve.
#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub dx: DVector<f64>,
    /// Krylov dimension used.
    pub k: usize,
    pub f_evals: usize,
    /// The cap `m_max` was reached with `ρ` still above `errtol`.
    pub capped: bool,
    pub rho: f64,
    pub orthogonality_loss: f64,
    pub secant_checks: Vec<SecantCheck>,
}

/// Apply the stored rotations to the new Hessenberg column
/// `col = H(0..=k, k-1)` (length `k+1`), form the next rotation, zero the
/// subdiagonal entry and rotate `g(k-1..=k)`. Returns `|g(k)|`.
pub fn givens_qr_update(col: &mut [f64], c: &mut Vec<f64>, s: &mut Vec<f64>, g: &mut [f64]) -> f64 {
    let k = col.len() - 1;
    debug_assert_eq!(c.len(), k - 1);
    for i in 0..k - 1 {
        let w1 = c[i] * col[i] - s[i] * col[i + 1];
        let w2 = s[i] * col[i] + c[i] * col[i + 1];
        col[i] = w1;
        col[i + 1] = w2;
    }
    let v = col[k - 1].hypot(col[k]);
    let (ck, sk) = if v == 0.0 {
        (1.0, 0.0)
    } else {
        (col[k - 1] / v, -col[k] / v)
    };
    col[k - 1] = ck * col[k - 1] - sk * col[k];
    col[k] = 0.0;
    let tmp1 = ck * g[k - 1] - sk * g[k];
    let tmp2 = sk * g[k - 1] + ck * g[k];
    g[k - 1] = tmp1;
    g[k] = tmp2;
    c.push(ck);
    s.push(sk);
    g[k].abs()
}

/// Solve the leading `k×k` upper-triangular block of `h` against `g`.
pub fn back_substitute(h: &DMatrix<f64>, g: &[f64], k: usize) -> Result<Vec<f64>, SolverError> {
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        let d = h[(i, i)];
        if d == 0.0 {
            return Err(SolverError::SingularTriangle(i));
        }
        let mut acc = g[i];
        for j in i + 1..k {
            acc -= h[(i, j)] * y[j];
        }
        y[i] = acc / d;
    }
    Ok(y)
}

/// Finite-difference GMRES for `J·ΔX = −F(X)`, optionally right
/// preconditioned by `precond.m` with inner updates collected in
/// `precond.m0`.
pub fn gmres_inner<E>(
    f: &mut dyn FnMut(&DVector<f64>) -> Result<DVector<f64>, E>,
    x: &DVector<f64>,
    fx: &DVector<f64>,
    opts: &SolverOptions,
    mut precond: Option<&mut Preconditioner>,
    newton_iter: usize,
) -> Result<GmresOutcome, GmresFailure<E>> {
    let n = x.len();
    let kmax = opts.m_max.unwrap_or(n).min(n).max(1);
    let rho0 = fx.norm();
    let errtol = (0.5 * opts.tolerance).max(opts.reltol * rho0);
    let eps = opts.perturbation(x);
    let update_m0 = opts.precondition == super::Preconditioning::Broyden;

    let mut ws = GmresWorkspace::new(kmax);
    ws.rho = rho0;
    ws.g[0] = rho0;
    ws.q.push(-fx / rho0);

    let mut k = 0;
    let mut f_evals = 0;
    let mut secant_checks = Vec::new();
    while ws.rho > errtol && k < kmax {
        k += 1;
        let qk = &ws.q[k - 1];
        let z = match precond.as_deref() {
            Some(p) => &p.m * qk,
            None => qk.clone(),
        };
        // a long preconditioned direction would carry the perturbation out
        // of the linear range
        let step = eps / z.norm().max(1.0);
        let ez = &z * step;
        let fz = match f(&(x + &ez)) {
            Ok(v) => v,
            Err(source) => {
                return Err(GmresFailure::Eval {
                    source,
                    f_evals: f_evals + 1,
                })
            }
        };
        f_evals += 1;
        let df = fz - fx;
        let mut w = &df / step;
        if update_m0 {
            if let Some(p) = precond.as_deref_mut() {
                let outcome = precond_inner_update(&mut p.m0, &ez, &df);
                secant_checks.push(SecantCheck::from_outcome(
                    SecantKind::Inner,
                    newton_iter,
                    outcome,
                ));
            }
        }

        let mut col = vec![0.0; k + 1];
        let before = w.norm();
        for (j, qj) in ws.q.iter().enumerate() {
            col[j] = w.dot(qj);
            w.axpy(-col[j], qj, 1.0);
        }
        // second Gram-Schmidt pass when cancellation was severe
        if w.norm() < 0.7 * before {
            for (j, qj) in ws.q.iter().enumerate() {
                let r = w.dot(qj);
                col[j] += r;
                w.axpy(-r, qj, 1.0);
            }
        }
        col[k] = w.norm();
        let breakdown = col[k] == 0.0;
        if !breakdown {
            ws.q.push(w / col[k]);
        }
        ws.rho = givens_qr_update(&mut col, &mut ws.c, &mut ws.s, &mut ws.g);
        for (i, v) in col.iter().enumerate() {
            ws.h[(i, k - 1)] = *v;
        }
        if breakdown {
            log::debug!("happy breakdown at k = {k}");
            break;
        }
    }

    let capped = k == kmax && ws.rho > errtol;
    if capped {
        log::warn!(
            "GMRES reached m_max = {kmax} with rho = {:.3e} > errtol = {errtol:.3e}",
            ws.rho
        );
    }
    let y = back_substitute(&ws.h, &ws.g, k).map_err(GmresFailure::Solver)?;
    let mut dx = DVector::zeros(n);
    for (j, yj) in y.iter().enumerate() {
        dx.axpy(*yj, &ws.q[j], 1.0);
    }
    if let Some(p) = precond.as_deref() {
        dx = &p.m * dx;
    }
    Ok(GmresOutcome {
        dx,
        k,
        f_evals,
        capped,
        rho: ws.rho,
        orthogonality_loss: ws.orthogonality_loss(),
        secant_checks,
    })
}

#[derive(Debug)]
pub enum GmresFailure<E> {
    Eval { source: E, f_evals: usize },
    Solver(SolverError),
}

impl SecantCheck {
    pub(crate) fn from_outcome(
        kind: SecantKind,
        newton_iter: usize,
        outcome: UpdateOutcome,
    ) -> Self {
        let rel_error = match outcome {
            UpdateOutcome::Applied { secant_error } => Some(secant_error),
            UpdateOutcome::Skipped => None,
        };
        SecantCheck {
            kind,
            newton_iter,
            rel_error,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::Preconditioning;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::convert::Infallible;

    fn linear(
        j: DMatrix<f64>,
        b: DVector<f64>,
    ) -> impl FnMut(&DVector<f64>) -> Result<DVector<f64>, Infallible> {
        move |x| Ok(&j * x - &b)
    }

    fn opts(reltol: f64) -> SolverOptions {
        SolverOptions {
            reltol,
            tolerance: 1e-14,
            precondition: Preconditioning::Off,
            ..SolverOptions::default()
        }
    }

    #[test]
    fn givens_three_four() {
        let mut col = [3.0, 4.0];
        let (mut c, mut s) = (vec![], vec![]);
        let mut g = [1.0, 0.0];
        givens_qr_update(&mut col, &mut c, &mut s, &mut g);
        assert_eq!(col, [5.0, 0.0]);
        assert_eq!((c[0], s[0]), (0.6, -0.8));
    }

    #[test]
    fn givens_already_triangular() {
        let mut col = [2.5, 0.0];
        let (mut c, mut s) = (vec![], vec![]);
        let mut g = [1.5, 0.0];
        let rho = givens_qr_update(&mut col, &mut c, &mut s, &mut g);
        assert_eq!((c[0], s[0]), (1.0, 0.0));
        assert_eq!(g, [1.5, 0.0]);
        assert_eq!(rho, 0.0);
    }

    #[test]
    fn givens_no_progress_rotation() {
        // tail (0, 1) yields c = 0, s = -1
        let mut col = [0.0, 1.0];
        let (mut c, mut s) = (vec![], vec![]);
        let rho = 0.7;
        let mut g = [rho, 0.0];
        let r = givens_qr_update(&mut col, &mut c, &mut s, &mut g);
        assert_eq!((c[0], s[0]), (0.0, -1.0));
        assert_eq!(g, [0.0, -rho]);
        assert_eq!(r, rho);
    }

    #[test]
    fn zero_column_gives_identity_rotation() {
        let mut col = [0.0, 0.0];
        let (mut c, mut s) = (vec![], vec![]);
        let mut g = [1.0, 0.0];
        givens_qr_update(&mut col, &mut c, &mut s, &mut g);
        assert_eq!((c[0], s[0]), (1.0, 0.0));
    }

    #[test]
    fn back_substitution_examples() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        assert_eq!(back_substitute(&h, &[3.0, 1.0], 2).unwrap(), vec![1.0, 1.0]);
        let h = DMatrix::from_row_slice(1, 1, &[4.0]);
        assert_eq!(back_substitute(&h, &[2.0], 1).unwrap(), vec![0.5]);
        let h = DMatrix::<f64>::identity(3, 3);
        assert_eq!(
            back_substitute(&h, &[1.0, -2.0, 3.0], 3).unwrap(),
            vec![1.0, -2.0, 3.0]
        );
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        assert!(matches!(
            back_substitute(&h, &[1.0, 1.0], 2),
            Err(SolverError::SingularTriangle(1))
        ));
    }

    #[test]
    fn identity_jacobian_needs_one_direction() {
        let b = DVector::from_vec(vec![1.0, 2.0, -3.0]);
        let mut f = linear(DMatrix::identity(3, 3), b.clone());
        let x = DVector::zeros(3);
        let fx = f(&x).unwrap();
        let out = gmres_inner(&mut f, &x, &fx, &opts(1e-10), None, 1).unwrap();
        assert_eq!(out.k, 1);
        assert!((out.dx - &b).norm() < 1e-10);
    }

    #[test]
    fn rotation_needs_two_directions() {
        let j = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let b = DVector::from_vec(vec![1.0, 0.5]);
        let mut f = linear(j.clone(), b.clone());
        let x = DVector::zeros(2);
        let fx = f(&x).unwrap();
        let out = gmres_inner(&mut f, &x, &fx, &opts(1e-10), None, 1).unwrap();
        assert_eq!(out.k, 2);
        let exact = j.lu().solve(&b).unwrap();
        assert!((out.dx - exact).norm() < 1e-10);
    }

    #[test]
    fn matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20;
        let j = DMatrix::from_fn(n, n, |r, c| {
            let v: f64 = rng.gen_range(-0.2..0.2);
            if r == c {
                3.0 + v
            } else {
                v
            }
        });
        let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let mut f = linear(j.clone(), b.clone());
        let x = DVector::zeros(n);
        let fx = f(&x).unwrap();
        let out = gmres_inner(&mut f, &x, &fx, &opts(1e-10), None, 1).unwrap();
        let exact = j.lu().solve(&b).unwrap();
        assert!((out.dx - exact).norm() < 1e-8);
        assert!(out.orthogonality_loss < 1e-10);
    }

    #[test]
    fn long_preconditioned_directions_stay_linear() {
        // f(x) = x + x²/2 componentwise, J(0) = I; an eps-long step along
        // M q with ‖M q‖ = 1e4 would see a directional error of ~5e3
        let mut f = |x: &DVector<f64>| -> Result<DVector<f64>, Infallible> {
            Ok(x.map(|v| v + 0.5 * v * v) - DVector::from_element(x.len(), 1e-3))
        };
        let n = 4;
        let x = DVector::zeros(n);
        let fx = f(&x).unwrap();
        let mut p = Preconditioner::identity(n);
        p.m *= 1e4;
        p.m0 *= 1e4;
        let o = SolverOptions {
            precondition: Preconditioning::Identity,
            ..opts(1e-10)
        };
        let out = gmres_inner(&mut f, &x, &fx, &o, Some(&mut p), 1).unwrap();
        // the O(eps) truncation error of an unpreconditioned difference
        let err = (&out.dx - DVector::from_element(n, 1e-3)).amax();
        assert!(err < 1e-7, "{err:e}");
    }

    #[test]
    fn inner_residual_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 12;
        let j =
            DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)) + DMatrix::identity(n, n) * 2.0;
        let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let x = DVector::zeros(n);
        let mut last = f64::INFINITY;
        for kmax in 1..=n {
            let mut f = linear(j.clone(), b.clone());
            let fx = f(&x).unwrap();
            let o = SolverOptions {
                m_max: Some(kmax),
                ..opts(1e-14)
            };
            let out = gmres_inner(&mut f, &x, &fx, &o, None, 1).unwrap();
            assert!(out.rho <= last * (1.0 + 1e-12));
            last = out.rho;
        }
    }

    #[test]
    fn cap_is_flagged() {
        let j = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
        let b = DVector::from_element(4, 1.0);
        let mut f = linear(j, b);
        let x = DVector::zeros(4);
        let fx = f(&x).unwrap();
        let o = SolverOptions {
            m_max: Some(2),
            ..opts(1e-12)
        };
        let out = gmres_inner(&mut f, &x, &fx, &o, None, 1).unwrap();
        assert!(out.capped);
        assert_eq!(out.k, 2);
    }
}
