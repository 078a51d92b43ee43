//! Problem definitions: gradient-system Brownian dynamics and driving noise.
//!
//! The continuous model is the overdamped Langevin equation
//!
//! ```text
//!     dX_t = -grad V(X_t) dt + sigma dW_t,
//! ```
//!
//! whose unique invariant measure has density proportional to
//! `exp(-2 V(x) / sigma^2)`.  With the default `sigma = sqrt(2)` this is the
//! Gibbs density `exp(-V)`.
//!
//! Potentials expose value, gradient and Hessian analytically; the
//! contracted third derivative `grad(laplacian V)` (needed by the weak-Taylor
//! machinery) is analytic where tractable and falls back to central
//! differences of the Hessian trace otherwise.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown potential '{0}'")]
    UnknownPotential(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A smooth confining potential `V : R^d -> R`.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    /// Writes `grad V(x)` into `out`.
    fn gradient_into(&self, x: &[f64], out: &mut [f64]);
    /// Writes the row-major `d*d` Hessian of `V` at `x` into `out`.
    fn hessian_into(&self, x: &[f64], out: &mut [f64]);
    /// Writes `grad(laplacian V)(x)` into `out`.  Default: central
    /// differences of the Hessian trace with step `1e-5 * (1 + |x|)`.
    fn grad_laplacian_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let mut xp = x.to_vec();
        let mut h = vec![0.0; d * d];
        let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let delta = 1e-5 * scale;
        for j in 0..d {
            xp[j] = x[j] + delta;
            self.hessian_into(&xp, &mut h);
            let plus: f64 = (0..d).map(|i| h[i * d + i]).sum();
            xp[j] = x[j] - delta;
            self.hessian_into(&xp, &mut h);
            let minus: f64 = (0..d).map(|i| h[i * d + i]).sum();
            xp[j] = x[j];
            out[j] = (plus - minus) / (2.0 * delta);
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(x, &mut out);
        out
    }

    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        self.hessian_into(x, &mut out);
        out
    }
}

// ══════════════════════════════════════════════════════════════════════
// Built-in potentials
// ══════════════════════════════════════════════════════════════════════

/// `V(x) = x' A x / 2` for a symmetric positive definite `A`.
#[derive(Clone, Debug)]
pub struct QuadraticPotential {
    dim: usize,
    /// Row-major symmetric matrix.
    pub a: Vec<f64>,
}

impl QuadraticPotential {
    pub fn new(dim: usize, a: Vec<f64>) -> Self {
        assert_eq!(a.len(), dim * dim);
        for i in 0..dim {
            for j in 0..i {
                assert!(
                    (a[i * dim + j] - a[j * dim + i]).abs() <= 1e-12 * a[i * dim + j].abs().max(1.0),
                    "quadratic form matrix must be symmetric"
                );
            }
        }
        Self { dim, a }
    }

    /// Scalar Ornstein-Uhlenbeck well `V(x) = gamma x^2 / 2`.
    pub fn ou(gamma: f64) -> Self {
        Self::new(1, vec![gamma])
    }

    /// The ill-conditioned planar well
    /// `V(x) = x1^2/2 + x2^2/(2 eps) + x1 x2/4`.
    pub fn linear2d(epsilon: f64) -> Self {
        Self::new(2, vec![1.0, 0.25, 0.25, 1.0 / epsilon])
    }
}

impl Potential for QuadraticPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut v = 0.0;
        for i in 0..d {
            for j in 0..d {
                v += x[i] * self.a[i * d + j] * x[j];
            }
        }
        0.5 * v
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            out[i] = (0..d).map(|j| self.a[i * d + j] * x[j]).sum();
        }
    }

    fn hessian_into(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.a);
    }

    fn grad_laplacian_into(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Symmetric double well `V(x) = (1 - x^2)^2` on the line.
#[derive(Clone, Copy, Debug, Default)]
pub struct DoubleWell1d;

impl Potential for DoubleWell1d {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, x: &[f64]) -> f64 {
        let w = 1.0 - x[0] * x[0];
        w * w
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 4.0 * x[0] * (x[0] * x[0] - 1.0);
    }

    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 12.0 * x[0] * x[0] - 4.0;
    }

    fn grad_laplacian_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 24.0 * x[0];
    }
}

/// Planar multi-well potential
/// `V(x) = (1 - x1^2)^2 + x2^4 - x1 + x1 cos(x2) + (x2 + x1^2)^2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct NonStiff2d;

impl Potential for NonStiff2d {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        let w = 1.0 - x1 * x1;
        let s = x2 + x1 * x1;
        w * w + x2.powi(4) - x1 + x1 * x2.cos() + s * s
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let (x1, x2) = (x[0], x[1]);
        let s = x2 + x1 * x1;
        out[0] = 4.0 * x1 * (x1 * x1 - 1.0) - 1.0 + x2.cos() + 4.0 * x1 * s;
        out[1] = 4.0 * x2.powi(3) - x1 * x2.sin() + 2.0 * s;
    }

    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        let (x1, x2) = (x[0], x[1]);
        out[0] = 24.0 * x1 * x1 + 4.0 * x2 - 4.0;
        out[1] = -x2.sin() + 4.0 * x1;
        out[2] = out[1];
        out[3] = 12.0 * x2 * x2 - x1 * x2.cos() + 2.0;
    }

    fn grad_laplacian_into(&self, x: &[f64], out: &mut [f64]) {
        let (x1, x2) = (x[0], x[1]);
        out[0] = 48.0 * x1 - x2.cos();
        out[1] = 4.0 + 24.0 * x2 + x1 * x2.sin();
    }
}

/// Stiff three-dimensional variant with a strong quadratic coupling:
/// `V(x) = (1 - x1^2)^2 + x2^4 - x1 + x3 cos(x2) + 100 (x2 + x1^2)^2
///         + (kappa/2) (x1 - x3)^2`, `kappa = 1e6`.
#[derive(Clone, Copy, Debug)]
pub struct Stiff3d {
    pub kappa: f64,
}

impl Default for Stiff3d {
    fn default() -> Self {
        Self { kappa: 1e6 }
    }
}

impl Potential for Stiff3d {
    fn dim(&self) -> usize {
        3
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        let w = 1.0 - x1 * x1;
        let s = x2 + x1 * x1;
        let r = x1 - x3;
        w * w + x2.powi(4) - x1 + x3 * x2.cos() + 100.0 * s * s + 0.5 * self.kappa * r * r
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        let s = x2 + x1 * x1;
        let r = x1 - x3;
        out[0] = 4.0 * x1 * (x1 * x1 - 1.0) - 1.0 + 400.0 * x1 * s + self.kappa * r;
        out[1] = 4.0 * x2.powi(3) - x3 * x2.sin() + 200.0 * s;
        out[2] = x2.cos() - self.kappa * r;
    }

    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        let s = x2 + x1 * x1;
        out.fill(0.0);
        out[0] = 12.0 * x1 * x1 - 4.0 + 400.0 * s + 800.0 * x1 * x1 + self.kappa;
        out[1] = 400.0 * x1;
        out[2] = -self.kappa;
        out[3] = out[1];
        out[4] = 12.0 * x2 * x2 - x3 * x2.cos() + 200.0;
        out[5] = -x2.sin();
        out[6] = out[2];
        out[7] = out[5];
        out[8] = self.kappa;
    }

    fn grad_laplacian_into(&self, x: &[f64], out: &mut [f64]) {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        out[0] = 2424.0 * x1;
        out[1] = 400.0 + 24.0 * x2 + x3 * x2.sin();
        out[2] = -x2.cos();
    }
}

/// Radially symmetric spring `V(x) = 25 (1 - |x|)^4` in `dim` dimensions.
/// The gradient is extended by 0 at the (non-smooth, zero-density) origin.
#[derive(Clone, Copy, Debug)]
pub struct SpringPotential {
    dim: usize,
}

impl SpringPotential {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1);
        Self { dim }
    }

    pub fn radial_value(r: f64) -> f64 {
        25.0 * (1.0 - r).powi(4)
    }

    /// `dV/dr`.
    fn radial_slope(r: f64) -> f64 {
        -100.0 * (1.0 - r).powi(3)
    }
}

impl Potential for SpringPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        Self::radial_value(norm2(x))
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let r = norm2(x);
        if r == 0.0 {
            out.fill(0.0);
            return;
        }
        let slope = Self::radial_slope(r) / r;
        for (o, xi) in out.iter_mut().zip(x) {
            *o = slope * xi;
        }
    }

    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let r = norm2(x);
        out.fill(0.0);
        if r == 0.0 {
            return;
        }
        // H = (V'/r) I + (V'' - V'/r) (x x') / r^2
        let vp_over_r = Self::radial_slope(r) / r;
        let vpp = 300.0 * (1.0 - r).powi(2);
        let aniso = (vpp - vp_over_r) / (r * r);
        for i in 0..d {
            out[i * d + i] = vp_over_r;
            for j in 0..d {
                out[i * d + j] += aniso * x[i] * x[j];
            }
        }
    }
}

// ══════════════════════════════════════════════════════════════════════
// Dynamics and registry
// ══════════════════════════════════════════════════════════════════════

/// Brownian dynamics `dX = -grad V dt + sigma dW` for a shared potential.
#[derive(Clone)]
pub struct BrownianDynamics {
    pub potential: Arc<dyn Potential>,
    pub sigma: f64,
}

impl BrownianDynamics {
    pub fn new(potential: Arc<dyn Potential>, sigma: f64) -> Self {
        // sigma = 0 is allowed: every scheme then reduces to its
        // deterministic counterpart, which tests rely on.
        assert!(sigma.is_finite() && sigma >= 0.0, "sigma must be finite and nonnegative");
        Self { potential, sigma }
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    /// `f(x) = -grad V(x)`.
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        self.potential.gradient_into(x, out);
        for v in out.iter_mut() {
            *v = -*v;
        }
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.drift_into(x, &mut out);
        out
    }

    /// `f'(x) = -Hess V(x)`, row-major.
    pub fn drift_jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        self.potential.hessian_into(x, out);
        for v in out.iter_mut() {
            *v = -*v;
        }
    }

    /// Unnormalized log density of the invariant measure,
    /// `log rho(x) = -2 V(x) / sigma^2 + const`.
    pub fn gibbs_log_density(&self, x: &[f64]) -> f64 {
        -2.0 * self.potential.value(x) / (self.sigma * self.sigma)
    }
}

/// Parameters consumed by the registry; unused entries are ignored by
/// potentials that do not take them.
#[derive(Clone, Copy, Debug)]
pub struct ProblemParams {
    /// OU well stiffness.
    pub gamma: f64,
    /// Conditioning parameter of `linear2d`.
    pub epsilon: f64,
    /// Ambient dimension of `spring`.
    pub dim: usize,
}

impl Default for ProblemParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            epsilon: 1.0,
            dim: 10,
        }
    }
}

pub const BUILTIN_POTENTIALS: [&str; 6] = [
    "ou",
    "linear2d",
    "doublewell1d",
    "nonstiff2d",
    "stiff3d",
    "spring",
];

pub fn build_potential(
    name: &str,
    params: &ProblemParams,
) -> Result<Arc<dyn Potential>, ModelError> {
    if !(params.gamma > 0.0) {
        return Err(ModelError::InvalidParameter(format!(
            "gamma must be positive, got {}",
            params.gamma
        )));
    }
    if !(params.epsilon > 0.0) {
        return Err(ModelError::InvalidParameter(format!(
            "epsilon must be positive, got {}",
            params.epsilon
        )));
    }
    match name {
        "ou" => Ok(Arc::new(QuadraticPotential::ou(params.gamma))),
        "linear2d" => Ok(Arc::new(QuadraticPotential::linear2d(params.epsilon))),
        "doublewell1d" => Ok(Arc::new(DoubleWell1d)),
        "nonstiff2d" => Ok(Arc::new(NonStiff2d)),
        "stiff3d" => Ok(Arc::new(Stiff3d::default())),
        "spring" => Ok(Arc::new(SpringPotential::new(params.dim))),
        other => Err(ModelError::UnknownPotential(other.to_string())),
    }
}

/// Default noise amplitude: `sigma = sqrt(2)` makes the invariant density
/// `exp(-V)`.
pub const DEFAULT_SIGMA: f64 = std::f64::consts::SQRT_2;

pub fn build_problem(
    name: &str,
    params: &ProblemParams,
    sigma: f64,
) -> Result<BrownianDynamics, ModelError> {
    Ok(BrownianDynamics::new(build_potential(name, params)?, sigma))
}

// ══════════════════════════════════════════════════════════════════════
// Noise
// ══════════════════════════════════════════════════════════════════════

/// Per-trajectory Gaussian noise source.
///
/// Streams are keyed by `(seed, trajectory_index)` on a counter-based
/// generator, so an ensemble is reproducible bit for bit regardless of how
/// trajectories are scheduled across workers, and distinct trajectory
/// indices give statistically independent streams.  Within a trajectory the
/// per-step vectors `xi_0, xi_1, ...` are drawn sequentially.
pub struct NoiseStream {
    rng: ChaCha8Rng,
    dim: usize,
    draws: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, trajectory_index: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trajectory_index);
        Self { rng, dim, draws: 0 }
    }

    /// Draws one standard Gaussian vector.
    pub fn next_into(&mut self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        for v in out.iter_mut() {
            *v = StandardNormal.sample(&mut self.rng);
        }
        self.draws += 1;
    }

    pub fn next(&mut self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.next_into(&mut out);
        out
    }

    /// Number of vectors drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Gaussian density tail bound helper used in tests: `P(|Z| > t)` for a
/// standard normal, via the complementary error function series.
#[allow(dead_code)]
pub(crate) fn normal_tail(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (t * (2.0 * PI).sqrt())
}

// ══════════════════════════════════════════════════════════════════════

#[cfg(test)]
mod tests {
    use super::*;

    fn splitmix(state: &mut u64) -> f64 {
        *state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z = z ^ (z >> 31);
        (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    }

    /// Central-difference check of gradient and Hessian at scattered points.
    fn check_derivatives(p: &dyn Potential, lo: f64, hi: f64, avoid_origin: bool, seed: u64) {
        let d = p.dim();
        let mut state = seed;
        let mut checked = 0;
        while checked < 100 {
            let x: Vec<f64> = (0..d)
                .map(|_| lo + (splitmix(&mut state) + 0.5) * (hi - lo))
                .collect();
            if avoid_origin && norm2(&x) < 0.3 {
                continue;
            }
            checked += 1;
            let delta = 1e-5;
            let mut xp = x.clone();
            // Gradient vs value differences.  The tolerance carries a
            // cancellation term eps*|V|/delta for stiff potentials whose
            // values dwarf the difference being resolved.
            let grad = p.gradient(&x);
            for j in 0..d {
                xp[j] = x[j] + delta;
                let vp = p.value(&xp);
                xp[j] = x[j] - delta;
                let vm = p.value(&xp);
                xp[j] = x[j];
                let fd = (vp - vm) / (2.0 * delta);
                let cancel = 4.0 * f64::EPSILON * vp.abs().max(vm.abs()) / delta;
                let tol = 1e-6 * (1.0 + grad[j].abs()) + cancel;
                assert!(
                    (fd - grad[j]).abs() <= tol,
                    "gradient mismatch at {x:?} component {j}: fd {fd} vs {g}",
                    g = grad[j]
                );
            }
            // Hessian vs gradient differences.
            let hess = p.hessian(&x);
            for j in 0..d {
                xp[j] = x[j] + delta;
                let gp = p.gradient(&xp);
                xp[j] = x[j] - delta;
                let gm = p.gradient(&xp);
                xp[j] = x[j];
                for i in 0..d {
                    let fd = (gp[i] - gm[i]) / (2.0 * delta);
                    let exact = hess[i * d + j];
                    let cancel = 4.0 * f64::EPSILON * gp[i].abs().max(gm[i].abs()) / delta;
                    assert!(
                        (fd - exact).abs() <= 1e-5 * (1.0 + exact.abs()) + cancel,
                        "hessian mismatch at {x:?} entry ({i},{j}): fd {fd} vs {exact}"
                    );
                }
            }
        }
    }

    fn check_grad_laplacian(p: &dyn Potential, lo: f64, hi: f64, seed: u64) {
        let d = p.dim();
        let mut state = seed;
        for _ in 0..20 {
            let x: Vec<f64> = (0..d)
                .map(|_| lo + (splitmix(&mut state) + 0.5) * (hi - lo))
                .collect();
            let mut analytic = vec![0.0; d];
            p.grad_laplacian_into(&x, &mut analytic);
            // Independent finite-difference oracle on the Hessian trace.
            let mut xp = x.clone();
            let mut h = vec![0.0; d * d];
            let delta = 1e-4;
            for j in 0..d {
                xp[j] = x[j] + delta;
                p.hessian_into(&xp, &mut h);
                let tp: f64 = (0..d).map(|i| h[i * d + i]).sum();
                xp[j] = x[j] - delta;
                p.hessian_into(&xp, &mut h);
                let tm: f64 = (0..d).map(|i| h[i * d + i]).sum();
                xp[j] = x[j];
                let fd = (tp - tm) / (2.0 * delta);
                assert!(
                    (fd - analytic[j]).abs() <= 1e-4 * (1.0 + analytic[j].abs()),
                    "grad laplacian mismatch at {x:?} component {j}: fd {fd} vs {a}",
                    a = analytic[j]
                );
            }
        }
    }

    #[test]
    fn quadratic_derivatives_consistent() {
        check_derivatives(&QuadraticPotential::linear2d(1.0), -2.0, 2.0, false, 1);
        check_derivatives(&QuadraticPotential::linear2d(0.01), -1.0, 1.0, false, 2);
        check_derivatives(&QuadraticPotential::ou(1.5), -3.0, 3.0, false, 3);
    }

    #[test]
    fn doublewell_derivatives_consistent() {
        check_derivatives(&DoubleWell1d, -2.5, 2.5, false, 4);
        check_grad_laplacian(&DoubleWell1d, -2.5, 2.5, 5);
    }

    #[test]
    fn nonstiff2d_derivatives_consistent() {
        check_derivatives(&NonStiff2d, -2.0, 2.0, false, 6);
        check_grad_laplacian(&NonStiff2d, -2.0, 2.0, 7);
    }

    #[test]
    fn stiff3d_derivatives_consistent() {
        check_derivatives(&Stiff3d::default(), -1.5, 1.5, false, 8);
        check_grad_laplacian(&Stiff3d::default(), -1.5, 1.5, 9);
    }

    #[test]
    fn spring_derivatives_consistent() {
        check_derivatives(&SpringPotential::new(2), -2.0, 2.0, true, 10);
        check_derivatives(&SpringPotential::new(4), -1.5, 1.5, true, 11);
    }

    #[test]
    fn drift_examples() {
        // OU: f(x) = -gamma x.
        let ou = build_problem("ou", &ProblemParams { gamma: 1.5, ..Default::default() }, DEFAULT_SIGMA).unwrap();
        assert_eq!(ou.drift(&[2.0]), vec![-3.0]);

        // Planar quadratic at (1,1): A x = (1.25, 1.25).
        let lin = build_problem("linear2d", &ProblemParams::default(), DEFAULT_SIGMA).unwrap();
        let f = lin.drift(&[1.0, 1.0]);
        assert!((f[0] + 1.25).abs() < 1e-15 && (f[1] + 1.25).abs() < 1e-15);

        // Spring drift vanishes on the unit sphere.
        let spring = build_problem(
            "spring",
            &ProblemParams { dim: 2, ..Default::default() },
            DEFAULT_SIGMA,
        )
        .unwrap();
        let f = spring.drift(&[0.6, 0.8]);
        assert!(f[0].abs() < 1e-14 && f[1].abs() < 1e-14);
    }

    #[test]
    fn gibbs_log_density_examples() {
        // sigma = sqrt(2) makes log rho = -V.
        let dw = build_problem("doublewell1d", &ProblemParams::default(), DEFAULT_SIGMA).unwrap();
        assert!((dw.gibbs_log_density(&[0.0]) + 1.0).abs() < 1e-15);

        let ou = build_problem("ou", &ProblemParams::default(), DEFAULT_SIGMA).unwrap();
        assert!((ou.gibbs_log_density(&[2.0]) + 2.0).abs() < 1e-15);
    }

    #[test]
    fn registry_rejects_unknown_and_bad_params() {
        assert!(build_potential("nope", &ProblemParams::default()).is_err());
        assert!(build_potential(
            "linear2d",
            &ProblemParams { epsilon: 0.0, ..Default::default() }
        )
        .is_err());
    }

    #[test]
    fn noise_stream_is_reproducible_and_stream_dependent() {
        let a: Vec<Vec<f64>> = {
            let mut s = NoiseStream::new(7, 3, 2);
            (0..5).map(|_| s.next()).collect()
        };
        let b: Vec<Vec<f64>> = {
            let mut s = NoiseStream::new(7, 3, 2);
            (0..5).map(|_| s.next()).collect()
        };
        assert_eq!(a, b, "identical keys must give identical draws");

        let mut other = NoiseStream::new(7, 4, 2);
        assert_ne!(a[0], other.next(), "distinct trajectory indices must differ");
        let mut other_seed = NoiseStream::new(8, 3, 2);
        assert_ne!(a[0], other_seed.next(), "distinct seeds must differ");
    }

    #[test]
    fn noise_stream_counts_draws() {
        let mut s = NoiseStream::new(1, 0, 3);
        for _ in 0..17 {
            s.next();
        }
        assert_eq!(s.draws(), 17);
    }

    #[test]
    fn noise_stream_moments_match_standard_normal() {
        let n = 1_000_000usize;
        let d = 2;
        let mut s = NoiseStream::new(2024, 0, d);
        let mut mean = vec![0.0; d];
        let mut cov = vec![0.0; d * d];
        let mut xi = vec![0.0; d];
        for _ in 0..n {
            s.next_into(&mut xi);
            for i in 0..d {
                mean[i] += xi[i];
                for j in 0..d {
                    cov[i * d + j] += xi[i] * xi[j];
                }
            }
        }
        let nf = n as f64;
        for m in mean.iter_mut() {
            *m /= nf;
        }
        for (k, c) in cov.iter_mut().enumerate() {
            *c = *c / nf - mean[k / d] * mean[k % d];
        }
        for (i, m) in mean.iter().enumerate() {
            assert!(m.abs() < 5e-3, "mean[{i}] = {m} too far from 0");
        }
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 1.0 } else { 0.0 };
                let c = cov[i * d + j];
                assert!(
                    (c - target).abs() < 1e-2,
                    "cov[{i}][{j}] = {c} vs {target}"
                );
            }
        }
    }
}
