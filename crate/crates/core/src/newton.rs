//! Newton iteration for the implicit stages of the theta schemes, backed by a
//! dense LU factorization with partial pivoting.
//!
//! The systems solved here are small (the state dimension, typically 1-10) and
//! dense, so a straightforward Doolittle factorization is used rather than an
//! external linear-algebra backend.  The factorization is exposed as a value
//! ([`LuFactors`]) because the stabilized postprocessor reuses the factors of
//! the implicit-stage Jacobian instead of factoring the same matrix twice.

use thiserror::Error;

/// Iteration controls for [`solve_fixed_point`].
#[derive(Clone, Copy, Debug)]
pub struct NewtonConfig {
    /// Convergence threshold on the max norm of the residual.
    pub tolerance: f64,
    /// Iteration cap; exceeding it is a [`NewtonError::NonConvergence`].
    pub max_iterations: usize,
    /// When the Jacobian is re-evaluated and re-factored.
    pub jacobian_refresh: JacobianRefresh,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-13,
            max_iterations: 50,
            jacobian_refresh: JacobianRefresh::EveryIteration,
        }
    }
}

/// Jacobian refresh policy.
///
/// `EveryIteration` is the robust default for stiff nonlinear drifts.  `Once`
/// factors at the initial guess and runs chord iterations with those factors,
/// trading some robustness for exactly one factorization per solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobianRefresh {
    EveryIteration,
    Once,
}

#[derive(Debug, Error)]
pub enum NewtonError {
    #[error("newton iteration did not reach tolerance {tolerance:e} in {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        residual: f64,
        iterations: usize,
        tolerance: f64,
    },
    #[error("jacobian is numerically singular (pivot {pivot:e} at column {column})")]
    SingularJacobian { pivot: f64, column: usize },
    #[error("residual or update is not finite at iteration {iterations}")]
    NonFinite { iterations: usize },
}

/// Converged Newton solve together with the factors of the last Jacobian that
/// was assembled.  The factors are evaluated at the final linearization point,
/// which for a converged solve is within one Newton increment of the solution.
pub struct NewtonSolution {
    pub y: Vec<f64>,
    pub residual_norm: f64,
    /// Number of Newton updates applied (a converged initial guess counts 0).
    pub iterations: usize,
    pub factors: LuFactors,
    /// Number of LU factorizations performed during the solve.
    pub factorizations: usize,
}

/// Solves `residual(y) = 0` by Newton iteration with a residual-decrease
/// line search.
///
/// `jacobian` must fill a row-major `d*d` buffer with the derivative of the
/// residual at `y`.  The iteration stops as soon as the max norm of the
/// residual falls below the tolerance (scaled by the Jacobian magnitude for
/// stiff systems); on a linear residual this takes a single update plus one
/// confirming evaluation.
///
/// `merit` is the scalar potential whose gradient the residual is, when the
/// caller has one (the implicit stages of gradient flows are proximal
/// problems).  It enables a diagonally shifted rescue direction at points
/// where the Jacobian is indefinite and the plain Newton direction fails.
pub fn solve_fixed_point(
    residual: &mut dyn FnMut(&[f64], &mut [f64]),
    jacobian: &mut dyn FnMut(&[f64], &mut [f64]),
    mut merit: Option<&mut dyn FnMut(&[f64]) -> f64>,
    guess: &[f64],
    config: &NewtonConfig,
) -> Result<NewtonSolution, NewtonError> {
    let d = guess.len();
    let mut y = guess.to_vec();
    let mut r = vec![0.0; d];
    let mut jac = vec![0.0; d * d];
    let mut factors: Option<LuFactors> = None;
    let mut factorizations = 0usize;
    // Largest Jacobian entry seen.  The tolerance is measured relative
    // to this scale (floored at the absolute value): for stiff drifts
    // the residual's floating-point granularity grows with the Jacobian
    // and an absolute threshold below it would never be reached.
    let mut jac_scale = 1.0f64;

    for iterations in 0..=config.max_iterations {
        residual(&y, &mut r);
        let norm = max_norm(&r);
        if !norm.is_finite() {
            return Err(NewtonError::NonFinite { iterations });
        }
        if norm <= config.tolerance * jac_scale.max(1.0) {
            let factors = match factors {
                Some(f) => f,
                // Converged without a single update: factor at y so callers
                // can still rely on the Jacobian being available.
                None => {
                    jacobian(&y, &mut jac);
                    factorizations += 1;
                    LuFactors::factor(d, &jac)?
                }
            };
            return Ok(NewtonSolution {
                y,
                residual_norm: norm,
                iterations,
                factors,
                factorizations,
            });
        }
        if iterations == config.max_iterations {
            return Err(NewtonError::NonConvergence {
                residual: norm,
                iterations,
                tolerance: config.tolerance,
            });
        }
        let refresh = factors.is_none()
            || config.jacobian_refresh == JacobianRefresh::EveryIteration;
        if refresh {
            jacobian(&y, &mut jac);
            factorizations += 1;
            jac_scale = jac.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            factors = Some(LuFactors::factor(d, &jac)?);
        }
        let delta = factors.as_ref().unwrap().solve(&r);
        if max_norm(&delta) <= 4.0 * f64::EPSILON * (1.0 + max_norm(&y)) {
            // Update at floating-point granularity: apply as is, the
            // line search below could only chase rounding noise.
            for (yi, di) in y.iter_mut().zip(&delta) {
                *yi -= di;
            }
            continue;
        }
        // Step halving when the full update does not decrease the
        // residual; quartic terms in the stiff potentials make plain
        // Newton cycle from occasional large noise kicks.  The search
        // uses the Euclidean norm, for which the Newton direction is
        // always a descent direction; the convergence test above stays
        // on the max norm.
        let base = euclid_norm(&r);
        let mut scale = 1.0f64;
        let mut trial = vec![0.0; d];
        let mut advanced = false;
        loop {
            for i in 0..d {
                trial[i] = y[i] - scale * delta[i];
            }
            residual(&trial, &mut r);
            let trial_norm = euclid_norm(&r);
            if trial_norm.is_finite() && trial_norm < base && trial.iter().all(|v| v.is_finite()) {
                y.copy_from_slice(&trial);
                advanced = true;
                break;
            }
            scale *= 0.5;
            if scale < 1.0 / 65536.0 {
                break;
            }
        }
        if advanced {
            continue;
        }
        // The Newton direction went nowhere: the Jacobian is indefinite
        // somewhere between here and the root.  For proximal stages a
        // diagonal shift restores a descent direction for the merit.
        let rescued = match merit.as_mut() {
            Some(merit) => {
                residual(&y, &mut r);
                rescue_step(&r, *merit, &jac, jac_scale, &mut y, &mut factorizations)?
            }
            None => false,
        };
        if !rescued {
            return Err(NewtonError::NonConvergence {
                residual: norm,
                iterations,
                tolerance: config.tolerance,
            });
        }
    }
    unreachable!("loop returns on convergence or iteration cap");
}

/// One diagonally shifted descent step accepted on merit decrease.  Returns
/// false when no shift in the ladder produces one, which the caller reports
/// as non-convergence.
fn rescue_step(
    r: &[f64],
    merit: &mut dyn FnMut(&[f64]) -> f64,
    jac: &[f64],
    jac_scale: f64,
    y: &mut [f64],
    factorizations: &mut usize,
) -> Result<bool, NewtonError> {
    let d = y.len();
    let m0 = merit(y);
    if !m0.is_finite() {
        return Ok(false);
    }
    let mut trial = vec![0.0; d];
    for boost in [1e-4, 1e-2, 1.0, 1e2] {
        let shift = boost * jac_scale;
        let mut shifted = jac.to_vec();
        for i in 0..d {
            shifted[i * d + i] += shift;
        }
        let factors = match LuFactors::factor(d, &shifted) {
            Ok(f) => f,
            Err(_) => continue,
        };
        *factorizations += 1;
        let delta = factors.solve(r);
        let mut scale = 1.0f64;
        while scale >= 1.0 / 65536.0 {
            for i in 0..d {
                trial[i] = y[i] - scale * delta[i];
            }
            let m1 = merit(&trial);
            if m1.is_finite() && m1 < m0 && trial.iter().all(|v| v.is_finite()) {
                y.copy_from_slice(&trial);
                return Ok(true);
            }
            scale *= 0.5;
        }
    }
    Ok(false)
}

/// LU factorization `P A = L U` of a dense square matrix, partial pivoting.
#[derive(Clone, Debug)]
pub struct LuFactors {
    dim: usize,
    /// Packed L (unit lower, below diagonal) and U (upper, on/above diagonal).
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl LuFactors {
    /// Factors a row-major `dim*dim` matrix.  A pivot below a scaled epsilon
    /// threshold reports [`NewtonError::SingularJacobian`].
    pub fn factor(dim: usize, matrix: &[f64]) -> Result<Self, NewtonError> {
        assert_eq!(matrix.len(), dim * dim, "matrix must be dim*dim");
        let mut lu = matrix.to_vec();
        let mut perm: Vec<usize> = (0..dim).collect();
        let scale = matrix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = if scale > 0.0 {
            scale * f64::EPSILON * dim as f64
        } else {
            f64::MIN_POSITIVE
        };
        for col in 0..dim {
            let mut pivot_row = col;
            let mut pivot_val = lu[col * dim + col].abs();
            for row in col + 1..dim {
                let v = lu[row * dim + col].abs();
                if v > pivot_val {
                    pivot_val = v;
                    pivot_row = row;
                }
            }
            if pivot_val <= tiny {
                return Err(NewtonError::SingularJacobian {
                    pivot: pivot_val,
                    column: col,
                });
            }
            if pivot_row != col {
                for k in 0..dim {
                    lu.swap(col * dim + k, pivot_row * dim + k);
                }
                perm.swap(col, pivot_row);
            }
            let pivot = lu[col * dim + col];
            for row in col + 1..dim {
                let factor = lu[row * dim + col] / pivot;
                lu[row * dim + col] = factor;
                for k in col + 1..dim {
                    lu[row * dim + k] -= factor * lu[col * dim + k];
                }
            }
        }
        Ok(Self { dim, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves `A x = rhs` using the stored factors.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.dim);
        let d = self.dim;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();
        // Forward substitution with unit lower factor.
        for row in 1..d {
            for col in 0..row {
                x[row] -= self.lu[row * d + col] * x[col];
            }
        }
        // Back substitution with the upper factor.
        for row in (0..d).rev() {
            for col in row + 1..d {
                x[row] -= self.lu[row * d + col] * x[col];
            }
            x[row] /= self.lu[row * d + row];
        }
        x
    }
}

/// Convenience: factor and solve in one call.
pub fn lu_solve(dim: usize, matrix: &[f64], rhs: &[f64]) -> Result<Vec<f64>, NewtonError> {
    Ok(LuFactors::factor(dim, matrix)?.solve(rhs))
}

pub(crate) fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn euclid_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ══════════════════════════════════════════════════════════════════════
