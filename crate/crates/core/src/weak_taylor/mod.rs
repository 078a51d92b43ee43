//! Weak-Taylor machinery: quadrature evaluation of the one-step
//! expectation `U(x, h) = E(phi(X_1) | X_0 = x)` and closed forms for the
//! generator `L`, the second-order expansion coefficient `A_1` of the
//! theta-method kernels, and `L^2`, so that
//! `U = phi + h L phi + h^2 A_1 phi + O(h^3)`
//! can be checked term by term, together with the integration-by-parts
//! identities that reduce `<A_1 phi>` to first-derivative form under the
//! Gibbs measure.

pub mod observables;

use thiserror::Error;

use crate::model::BrownianDynamics;
use crate::newton::NewtonConfig;
use crate::reference::{self, ReferenceError};
use crate::schemes::{step_theta_modified, ChainState, PostKind, SchemeError, SchemeSpec};

#[derive(Debug, Error)]
pub enum WeakTaylorError {
    #[error("unknown observable '{0}'")]
    UnknownObservable(String),
    #[error("observable '{observable}' needs dimension {expected}, problem has {got}")]
    DimensionMismatch {
        observable: String,
        expected: usize,
        got: usize,
    },
    #[error("kernel step failed under quadrature")]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
}

/// A smooth scalar observable with exact derivatives through fourth
/// order; higher derivatives enter only through directional contractions.
pub trait Observable: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient_into(&self, x: &[f64], out: &mut [f64]);
    /// Row-major `dim x dim` Hessian.
    fn hessian_into(&self, x: &[f64], out: &mut [f64]);
    /// `phi'''(x)[u, v, w]` (symmetric in its directions).
    fn third_directional(&self, x: &[f64], u: &[f64], v: &[f64], w: &[f64]) -> f64;
    /// `phi''''(x)[u, v, w, s]`.
    fn fourth_directional(&self, x: &[f64], u: &[f64], v: &[f64], w: &[f64], s: &[f64]) -> f64;

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(x, &mut out);
        out
    }

    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim() * self.dim()];
        self.hessian_into(x, &mut out);
        out
    }
}

// ══════════════════════════════════════════════════════════════════════
// Gauss-Hermite quadrature
// ══════════════════════════════════════════════════════════════════════

pub const DEFAULT_QUADRATURE_POINTS: usize = 30;

/// One-dimensional quadrature rule for standard normal expectations:
/// `E g(xi) ~ sum_k weights[k] g(nodes[k])`, weights summing to one.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// The q-point Gauss-Hermite rule in probabilists' normalization,
    /// exact for polynomial moments up to degree 2q - 1.  Eigenvalues of
    /// the Jacobi matrix of the Hermite recurrence seed a Newton
    /// iteration on the orthonormal recurrence (which stays O(1) near the
    /// roots, so no overflow for large q), and the weights come from the
    /// Christoffel sum at the polished nodes.
    pub fn gauss_hermite(points: usize) -> Self {
        assert!(points >= 1);
        let q = points;
        if q == 1 {
            return Self {
                nodes: vec![0.0],
                weights: vec![1.0],
            };
        }
        let mut jacobi = vec![0.0; q * q];
        for i in 0..q - 1 {
            let beta = ((i + 1) as f64).sqrt();
            jacobi[i * q + i + 1] = beta;
            jacobi[(i + 1) * q + i] = beta;
        }
        let (mut nodes, _) = reference::jacobi_eigen(q, &jacobi);
        let mut weights = vec![0.0; q];
        for (node, weight) in nodes.iter_mut().zip(weights.iter_mut()) {
            for _ in 0..8 {
                let (pq, pq1, _) = hermite_orthonormal(q, *node);
                // p_q'(x) = sqrt(q) p_{q-1}(x).
                let dx = pq / ((q as f64).sqrt() * pq1);
                *node -= dx;
                if dx.abs() < 1e-16 * (1.0 + node.abs()) {
                    break;
                }
            }
            let (_, _, christoffel) = hermite_orthonormal(q, *node);
            *weight = 1.0 / christoffel;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Evaluates the orthonormal probabilists' Hermite polynomials at `x`:
/// returns `(p_q, p_{q-1}, sum_{k<q} p_k^2)` with `p_0 = 1` and
/// `p_{k+1} = (x p_k - sqrt(k) p_{k-1}) / sqrt(k+1)`.
fn hermite_orthonormal(q: usize, x: f64) -> (f64, f64, f64) {
    let mut previous = 0.0;
    let mut current = 1.0;
    let mut christoffel = 1.0;
    for k in 0..q {
        let next = (x * current - (k as f64).sqrt() * previous) / ((k + 1) as f64).sqrt();
        previous = current;
        current = next;
        if k + 1 < q {
            christoffel += current * current;
        }
    }
    (current, previous, christoffel)
}

// ══════════════════════════════════════════════════════════════════════
// One-step expectation
// ══════════════════════════════════════════════════════════════════════

/// `E(phi(X_1) | X_0 = x)` for one kernel step of the scheme, by
/// tensorized Gauss-Hermite quadrature over the step noise (dimension at
/// most 3).  The spec's postprocessor is ignored: this is the expectation
/// over the chain's own one-step map.
pub fn one_step_expectation(
    problem: &BrownianDynamics,
    spec: &SchemeSpec,
    h: f64,
    x: &[f64],
    observable: &dyn Observable,
    rule: &QuadratureRule,
) -> Result<f64, WeakTaylorError> {
    let d = problem.dim();
    assert_eq!(observable.dim(), d);
    assert!(d <= 3, "tensor quadrature over noise limited to dim 3");
    let kernel = SchemeSpec::new(spec.theta, spec.a, 0.0, 0.0, PostKind::None, "kernel")
        .expect("kernel parameters already validated");
    let newton = NewtonConfig::default();
    let q = rule.len();
    let total = q.pow(d as u32);
    let mut xi = vec![0.0; d];
    let mut expectation = 0.0;
    for flat in 0..total {
        let mut idx = flat;
        let mut weight = 1.0;
        for component in xi.iter_mut() {
            let k = idx % q;
            idx /= q;
            *component = rule.nodes[k];
            weight *= rule.weights[k];
        }
        let state = ChainState::initial(x);
        let output = step_theta_modified(problem, &kernel, h, &state, &xi, &newton)?;
        expectation += weight * observable.value(&output.next.x);
    }
    Ok(expectation)
}

// ══════════════════════════════════════════════════════════════════════
// Differential operators
// ══════════════════════════════════════════════════════════════════════

/// Workspace of drift data shared by the operator evaluations.
struct DriftData {
    f: Vec<f64>,
    jacobian: Vec<f64>,
    /// `sum_i f''(e_i, e_i)`, the componentwise Laplacian of the drift.
    laplacian_f: Vec<f64>,
}

impl DriftData {
    fn at(problem: &BrownianDynamics, x: &[f64]) -> Self {
        let d = problem.dim();
        let f = problem.drift(x);
        let mut jacobian = vec![0.0; d * d];
        problem.drift_jacobian_into(x, &mut jacobian);
        let mut laplacian_f = vec![0.0; d];
        problem.potential.grad_laplacian_into(x, &mut laplacian_f);
        for component in laplacian_f.iter_mut() {
            *component = -*component;
        }
        Self {
            f,
            jacobian,
            laplacian_f,
        }
    }

    fn jf(&self) -> Vec<f64> {
        let d = self.f.len();
        (0..d)
            .map(|i| (0..d).map(|j| self.jacobian[i * d + j] * self.f[j]).sum())
            .collect()
    }

    fn divergence(&self) -> f64 {
        let d = self.f.len();
        (0..d).map(|i| self.jacobian[i * d + i]).sum()
    }

    fn speed2(&self) -> f64 {
        self.f.iter().map(|v| v * v).sum()
    }
}

fn basis(d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            e
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn quadratic_form(d: usize, matrix: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            total += u[i] * matrix[i * d + j] * v[j];
        }
    }
    total
}

fn frobenius(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sum_i phi'''(x)[e_i, e_i, v]`.
fn sum_third_diagonal(observable: &dyn Observable, x: &[f64], v: &[f64]) -> f64 {
    let e = basis(observable.dim());
    e.iter()
        .map(|ei| observable.third_directional(x, ei, ei, v))
        .sum()
}

/// `sum_{ij} phi''''(x)[e_i, e_i, e_j, e_j]`, the biharmonic contraction.
fn sum_fourth_diagonal(observable: &dyn Observable, x: &[f64]) -> f64 {
    let e = basis(observable.dim());
    let mut total = 0.0;
    for ei in &e {
        for ej in &e {
            total += observable.fourth_directional(x, ei, ei, ej, ej);
        }
    }
    total
}

/// Generator of the diffusion: `L phi = f . grad phi + (sigma^2/2) lap phi`.
pub fn apply_generator(problem: &BrownianDynamics, observable: &dyn Observable, x: &[f64]) -> f64 {
    let d = problem.dim();
    let f = problem.drift(x);
    let grad = observable.gradient(x);
    let hessian = observable.hessian(x);
    let laplacian: f64 = (0..d).map(|i| hessian[i * d + i]).sum();
    dot(&f, &grad) + 0.5 * problem.sigma * problem.sigma * laplacian
}

/// The `h^2` coefficient of the one-step expectation of the theta-method
/// kernel with noise shift `a`:
///
/// `A_1 phi = 1/2 phi''(f,f) + (sigma^2/2) sum_i phi'''(e_i,e_i,f)
///          + (sigma^4/8) sum_{ij} phi''''(e_i,e_i,e_j,e_j)
///          + theta phi'(f'f) + alpha (sigma^2/2) phi'(sum_i f''(e_i,e_i))
///          + beta sigma^2 sum_i phi''(f'e_i, e_i)`
///
/// with `alpha = (1-theta) a^2 + theta (a+1)^2` and `beta = a + theta`;
/// `a = 0` recovers the unmodified method, where both reduce to `theta`.
pub fn apply_a1(
    problem: &BrownianDynamics,
    theta: f64,
    a: f64,
    observable: &dyn Observable,
    x: &[f64],
) -> f64 {
    let d = problem.dim();
    let sigma2 = problem.sigma * problem.sigma;
    let drift = DriftData::at(problem, x);
    let grad = observable.gradient(x);
    let hessian = observable.hessian(x);
    let alpha = (1.0 - theta) * a * a + theta * (a + 1.0) * (a + 1.0);
    let beta = a + theta;
    0.5 * quadratic_form(d, &hessian, &drift.f, &drift.f)
        + 0.5 * sigma2 * sum_third_diagonal(observable, x, &drift.f)
        + 0.125 * sigma2 * sigma2 * sum_fourth_diagonal(observable, x)
        + theta * dot(&grad, &drift.jf())
        + 0.5 * alpha * sigma2 * dot(&grad, &drift.laplacian_f)
        + beta * sigma2 * frobenius(&hessian, &drift.jacobian)
}

/// `L^2 phi`, assembled from the same derivative data:
///
/// `L^2 phi = phi'(f'f) + phi''(f,f)
///          + (sigma^2/2) [2 sum_i phi'''(e_i,e_i,f)
///                         + phi'(sum_i f''(e_i,e_i))
///                         + 2 sum_i phi''(f'e_i,e_i)]
///          + (sigma^4/4) sum_{ij} phi''''(e_i,e_i,e_j,e_j)`.
pub fn apply_l2(problem: &BrownianDynamics, observable: &dyn Observable, x: &[f64]) -> f64 {
    let d = problem.dim();
    let sigma2 = problem.sigma * problem.sigma;
    let drift = DriftData::at(problem, x);
    let grad = observable.gradient(x);
    let hessian = observable.hessian(x);
    dot(&grad, &drift.jf())
        + quadratic_form(d, &hessian, &drift.f, &drift.f)
        + 0.5 * sigma2
            * (2.0 * sum_third_diagonal(observable, x, &drift.f)
                + dot(&grad, &drift.laplacian_f)
                + 2.0 * frobenius(&hessian, &drift.jacobian))
        + 0.25 * sigma2 * sigma2 * sum_fourth_diagonal(observable, x)
}

// ══════════════════════════════════════════════════════════════════════
// Integration by parts under the Gibbs measure
// ══════════════════════════════════════════════════════════════════════

/// Residuals of the four integration-by-parts identities that convert the
/// second-and-higher-derivative averages appearing in `<A_1 phi>` into
/// first-derivative form.  With `<.>` the Gibbs average:
///
/// 1. `<phi''(f,f)> = -<phi'(f'f + div(f) f + (2/sigma^2)|f|^2 f)>`
/// 2. `<sigma^2 sum_i phi'''(f,e_i,e_i)> =
///      <phi'(sigma^2 sum_i f''(e_i,e_i) + 4 f'f + 2 div(f) f
///            + (4/sigma^2)|f|^2 f)>`
/// 3. `<sigma^2 sum_{ij} phi''''(e_i,e_i,e_j,e_j)> =
///      -2 <sum_i phi'''(f,e_i,e_i)>`
/// 4. `<sigma^2 sum_i phi''(f'e_i,e_i)> =
///      -<phi'(sigma^2 sum_i f''(e_i,e_i) + 2 f'f)>`
///
/// Each residual is the quadrature average of the pointwise difference,
/// so identical nodes are used on both sides.
pub fn check_ibp_identities(
    problem: &BrownianDynamics,
    observable: &dyn Observable,
) -> Result<[f64; 4], WeakTaylorError> {
    let sigma2 = problem.sigma * problem.sigma;
    let d = problem.dim();

    let combination = |x: &[f64], w_lap: f64, w_jf: f64, w_div: f64, w_speed: f64| -> f64 {
        let drift = DriftData::at(problem, x);
        let grad = observable.gradient(x);
        let jf = drift.jf();
        let divergence = drift.divergence();
        let speed2 = drift.speed2();
        (0..d)
            .map(|i| {
                grad[i]
                    * (w_lap * sigma2 * drift.laplacian_f[i]
                        + w_jf * jf[i]
                        + (w_div * divergence + w_speed * speed2 / sigma2) * drift.f[i])
            })
            .sum()
    };

    let identity1 = |x: &[f64]| {
        let drift = DriftData::at(problem, x);
        let hessian = observable.hessian(x);
        quadratic_form(d, &hessian, &drift.f, &drift.f) + combination(x, 0.0, 1.0, 1.0, 2.0)
    };
    let identity2 = |x: &[f64]| {
        let drift = DriftData::at(problem, x);
        sigma2 * sum_third_diagonal(observable, x, &drift.f)
            - combination(x, 1.0, 4.0, 2.0, 4.0)
    };
    let identity3 = |x: &[f64]| {
        let drift = DriftData::at(problem, x);
        sigma2 * sum_fourth_diagonal(observable, x)
            + 2.0 * sum_third_diagonal(observable, x, &drift.f)
    };
    let identity4 = |x: &[f64]| {
        let drift = DriftData::at(problem, x);
        let hessian = observable.hessian(x);
        sigma2 * frobenius(&hessian, &drift.jacobian) + combination(x, 1.0, 2.0, 0.0, 0.0)
    };

    Ok([
        reference::gibbs_average(problem, &identity1)?.abs(),
        reference::gibbs_average(problem, &identity2)?.abs(),
        reference::gibbs_average(problem, &identity3)?.abs(),
        reference::gibbs_average(problem, &identity4)?.abs(),
    ])
}

// ══════════════════════════════════════════════════════════════════════
