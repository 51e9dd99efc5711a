//! Dense damped Newton with a forward-difference Jacobian.
//!
//! The systems solved here are tiny (at most a dozen unknowns), so the
//! Jacobian is rebuilt column by column at every iteration.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Convergence threshold on the max-norm of the checked residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative forward-difference step.
    pub fd_step: f64,
    /// Armijo halvings per iteration.
    pub max_backtracks: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
            fd_step: 1e-7,
            max_backtracks: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// Max-norm of the checked residual at `x`.
    pub residual_norm: f64,
}

/// Forward-difference Jacobian, step `fd_step · max(1, |x_j|)` per column.
pub fn fd_jacobian<F>(f: &mut F, x: &DVector<f64>, fx: &DVector<f64>, fd_step: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut jac = DMatrix::zeros(fx.len(), x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        let step = fd_step * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        let fp = f(&xp)?;
        xp[j] = x[j];
        jac.set_column(j, &((fp - fx) / step));
    }
    Ok(jac)
}

/// Solves `f(x) = 0`.
///
/// `f` is the (possibly scaled) residual used for the Newton direction and the
/// line-search merit; `check` maps a residual of `f` to the quantity whose
/// max-norm is compared against `opts.tol`. Systems may be overdetermined, in
/// which case each direction is the least-squares solution.
pub fn solve<F, C>(mut f: F, check: C, x0: DVector<f64>, opts: &NewtonOptions) -> Result<NewtonOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    C: Fn(&DVector<f64>, &DVector<f64>) -> f64,
{
    let mut x = x0;
    let mut fx = f(&x)?;
    let mut checked = check(&x, &fx);

    for iter in 0..=opts.max_iter {
        if !checked.is_finite() {
            break;
        }
        if checked <= opts.tol {
            return Ok(NewtonOutcome {
                x,
                iterations: iter,
                residual_norm: checked,
            });
        }
        if iter == opts.max_iter {
            break;
        }

        let jac = fd_jacobian(&mut f, &x, &fx, opts.fd_step)?;
        let dx = direction(jac, &fx)?;

        let merit = fx.norm();
        let mut t = 1.0;
        let mut trial = &x - &dx;
        let mut f_trial = f(&trial)?;
        for _ in 0..opts.max_backtracks {
            if f_trial.norm() <= (1.0 - 1e-4 * t) * merit {
                break;
            }
            t *= 0.5;
            trial = &x - &dx * t;
            f_trial = f(&trial)?;
        }
        x = trial;
        fx = f_trial;
        checked = check(&x, &fx);
    }

    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: checked,
    })
}

fn direction(jac: DMatrix<f64>, fx: &DVector<f64>) -> Result<DVector<f64>> {
    if jac.is_square() {
        if let Some(dx) = jac.clone().lu().solve(fx) {
            if dx.iter().all(|v| v.is_finite()) {
                return Ok(dx);
            }
        }
    }
    let svd = jac.svd(true, true);
    let largest = svd.singular_values.max();
    if !(largest > 0.0) {
        return Err(Error::SingularJacobian);
    }
    svd.solve(fx, 1e-13 * largest)
        .map_err(|_| Error::SingularJacobian)
}
