//! Ground-truth Gibbs averages `<phi> = Z^{-1} int phi e^{-2V/sigma^2}`.
//!
//! Three routes, by problem structure: exact moments when the invariant
//! measure is Gaussian, rotated tensor-product Gauss-Legendre quadrature
//! for general potentials in `d <= 3`, and a radial reduction for
//! spherically symmetric potentials in any dimension.  Quadratures refine
//! until two successive estimates agree, and that difference is reported
//! as the error estimate.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::model::{BrownianDynamics, Potential};
use crate::newton::LuFactors;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("matrix is not symmetric positive definite (eigenvalue {0})")]
    NotPositiveDefinite(f64),
    #[error("quadrature did not reach relative accuracy {target} (last change {last_change})")]
    NoConvergence { target: f64, last_change: f64 },
    #[error("no minimizer found for the potential in the search range")]
    NoMinimizer,
    #[error("invalid domain: {0}")]
    BadDomain(String),
    #[error("dimension {0} too large for tensor quadrature (max 3)")]
    DimensionTooLarge(usize),
    #[error("cache i/o: {0}")]
    CacheIo(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceMethod {
    GaussianClosedForm,
    TensorQuadrature,
    RadialQuadrature,
}

/// A reference average together with how it was computed and a bound on
/// the difference between the last two refinements.
#[derive(Clone, Copy, Debug)]
pub struct ReferenceValue {
    pub value: f64,
    pub method: ReferenceMethod,
    pub estimated_error: f64,
}

// ══════════════════════════════════════════════════════════════════════
// Small dense symmetric eigensolver (cyclic Jacobi)
// ══════════════════════════════════════════════════════════════════════

/// Eigendecomposition of a symmetric matrix: returns eigenvalues in
/// ascending order and the matrix whose column `j` is the `j`-th
/// eigenvector (row-major storage).
pub(crate) fn jacobi_eigen(dim: usize, matrix: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(matrix.len(), dim * dim);
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; dim * dim];
    for i in 0..dim {
        v[i * dim + i] = 1.0;
    }
    let norm = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..dim {
            for q in (p + 1)..dim {
                off = off.max(a[p * dim + q].abs());
            }
        }
        if off <= 1e-15 * norm {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                let apq = a[p * dim + q];
                if apq.abs() <= 1e-18 * norm {
                    continue;
                }
                let app = a[p * dim + p];
                let aqq = a[q * dim + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..dim {
                    let akp = a[k * dim + p];
                    let akq = a[k * dim + q];
                    a[k * dim + p] = c * akp - s * akq;
                    a[k * dim + q] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let apk = a[p * dim + k];
                    let aqk = a[q * dim + k];
                    a[p * dim + k] = c * apk - s * aqk;
                    a[q * dim + k] = s * apk + c * aqk;
                }
                for k in 0..dim {
                    let vkp = v[k * dim + p];
                    let vkq = v[k * dim + q];
                    v[k * dim + p] = c * vkp - s * vkq;
                    v[k * dim + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| a[i * dim + i].partial_cmp(&a[j * dim + j]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| a[i * dim + i]).collect();
    let mut vectors = vec![0.0; dim * dim];
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..dim {
            vectors[i * dim + new_j] = v[i * dim + old_j];
        }
    }
    (values, vectors)
}

// ══════════════════════════════════════════════════════════════════════
// Gauss-Legendre rule on [-1, 1]
// ══════════════════════════════════════════════════════════════════════

/// Nodes and weights of the n-point Gauss-Legendre rule, by Newton
/// iteration on the Legendre recurrence.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-style initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_and_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

// ══════════════════════════════════════════════════════════════════════
// Gaussian closed forms
// ══════════════════════════════════════════════════════════════════════

/// Moment selector for Gaussian invariant measures.
#[derive(Clone, Copy, Debug)]
pub enum GaussianMoment {
    /// `E sum_i x_i^2 = trace((sigma^2/2) A^{-1})`.
    TotalSecondMoment,
    /// `E x_i^2`.
    ComponentSecondMoment(usize),
}

/// Exact moments of the invariant measure `N(0, (sigma^2/2) A^{-1})` of
/// the quadratic potential `V = x'Ax/2`.
pub fn gaussian_reference(
    dim: usize,
    a: &[f64],
    sigma: f64,
    moment: GaussianMoment,
) -> Result<ReferenceValue, ReferenceError> {
    assert_eq!(a.len(), dim * dim);
    let (eigenvalues, _) = jacobi_eigen(dim, a);
    if eigenvalues[0] <= 0.0 {
        return Err(ReferenceError::NotPositiveDefinite(eigenvalues[0]));
    }
    let factors = LuFactors::factor(dim, a).expect("SPD matrix must factor");
    let half_sigma2 = 0.5 * sigma * sigma;
    let covariance_diagonal: Vec<f64> = (0..dim)
        .map(|j| {
            let mut e = vec![0.0; dim];
            e[j] = 1.0;
            half_sigma2 * factors.solve(&e)[j]
        })
        .collect();
    let value = match moment {
        GaussianMoment::TotalSecondMoment => covariance_diagonal.iter().sum(),
        GaussianMoment::ComponentSecondMoment(i) => covariance_diagonal[i],
    };
    Ok(ReferenceValue {
        value,
        method: ReferenceMethod::GaussianClosedForm,
        estimated_error: 0.0,
    })
}

// ══════════════════════════════════════════════════════════════════════
// Minimizer search
// ══════════════════════════════════════════════════════════════════════

/// All local minimizers found by damped-Newton descent from a coarse grid
/// of starting points in `[lo, hi]^d`, deduplicated and sorted by
/// potential value (deepest first).
pub fn find_minimizers(potential: &dyn Potential, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let d = potential.dim();
    let per_axis = 5usize;
    let total = per_axis.pow(d as u32);
    let mut found: Vec<Vec<f64>> = Vec::new();
    for flat in 0..total {
        let mut idx = flat;
        let start: Vec<f64> = (0..d)
            .map(|_| {
                let k = idx % per_axis;
                idx /= per_axis;
                lo + (hi - lo) * k as f64 / (per_axis - 1) as f64
            })
            .collect();
        if let Some(m) = descend(potential, &start) {
            let is_new = found
                .iter()
                .all(|other| dist_inf(other, &m) > 1e-6 * (1.0 + norm_inf(&m)));
            if is_new {
                found.push(m);
            }
        }
    }
    found.sort_by(|x, y| {
        potential
            .value(x)
            .partial_cmp(&potential.value(y))
            .unwrap()
    });
    found
}

fn descend(potential: &dyn Potential, start: &[f64]) -> Option<Vec<f64>> {
    let d = potential.dim();
    let mut x = start.to_vec();
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    let mut lambda = 1e-6;
    for _ in 0..300 {
        potential.gradient_into(&x, &mut grad);
        let gscale = norm_inf(&grad);
        potential.hessian_into(&x, &mut hess);
        let hscale = hess.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if gscale <= 1e-11 * hscale.max(1.0) {
            // Accept only if the Hessian is positive semidefinite here.
            let (eigs, _) = jacobi_eigen(d, &hess);
            if eigs[0] >= -1e-8 * hscale {
                return Some(x);
            }
            return None;
        }
        // Levenberg-damped Newton step on grad V = 0.
        let mut damped = hess.clone();
        for i in 0..d {
            damped[i * d + i] += lambda * hscale;
        }
        let step = match LuFactors::factor(d, &damped) {
            Ok(f) => f.solve(&grad),
            Err(_) => {
                lambda = (lambda * 10.0).min(1e8);
                continue;
            }
        };
        let candidate: Vec<f64> = (0..d).map(|i| x[i] - step[i]).collect();
        if candidate.iter().all(|v| v.is_finite())
            && potential.value(&candidate) <= potential.value(&x) + 1e-12
        {
            x = candidate;
            lambda = (lambda / 3.0).max(1e-12);
        } else {
            lambda = (lambda * 10.0).min(1e8);
        }
    }
    None
}

fn dist_inf(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
}

fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

// ══════════════════════════════════════════════════════════════════════
// Tensor quadrature
// ══════════════════════════════════════════════════════════════════════

/// Axis-aligned box in a rotated frame: integration points are
/// `origin + sum_i axes_i u_i half_widths_i`, `u in [-1,1]^d`, where row
/// `i` of `axes` is the `i`-th direction.
#[derive(Clone, Debug)]
pub struct QuadBox {
    pub origin: Vec<f64>,
    /// Row-major orthogonal matrix; row `i` is axis direction `i`.
    pub axes: Vec<f64>,
    pub half_widths: Vec<f64>,
}

impl QuadBox {
    fn point(&self, d: usize, u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.origin);
        for i in 0..d {
            let scale = u[i] * self.half_widths[i];
            for j in 0..d {
                out[j] += self.axes[i * d + j] * scale;
            }
        }
    }
}

/// Builds a rotated box covering every minimizer with `width_sigmas`
/// local standard deviations of slack per axis, then grows it until the
/// Gibbs weight on the boundary is negligible.
fn build_box(problem: &BrownianDynamics, width_sigmas: f64) -> Result<QuadBox, ReferenceError> {
    let potential = problem.potential.as_ref();
    let d = potential.dim();
    let minimizers = find_minimizers(potential, -2.5, 2.5);
    if minimizers.is_empty() {
        return Err(ReferenceError::NoMinimizer);
    }
    let primary = &minimizers[0];
    let hess = potential.hessian(primary);
    let (eigenvalues, vectors) = jacobi_eigen(d, &hess);
    let hscale = eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    // Axis i is eigenvector i of the primary Hessian (row i of `axes`).
    let mut axes = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            axes[i * d + j] = vectors[j * d + i];
        }
    }
    // Cover each minimizer's own Gaussian ellipsoid projected on the axes.
    let mut lows = vec![f64::INFINITY; d];
    let mut highs = vec![f64::NEG_INFINITY; d];
    let mut hm = vec![0.0; d * d];
    for m in &minimizers {
        potential.hessian_into(m, &mut hm);
        for i in 0..d {
            let center: f64 = (0..d).map(|j| axes[i * d + j] * (m[j] - primary[j])).sum();
            // Rayleigh quotient along the axis, floored to keep widths
            // finite at flat directions.
            let mut quad = 0.0;
            for j in 0..d {
                for k in 0..d {
                    quad += axes[i * d + j] * hm[j * d + k] * axes[i * d + k];
                }
            }
            let curvature = quad.max(1e-4 * hscale);
            let std = problem.sigma / (2.0 * curvature).sqrt();
            lows[i] = lows[i].min(center - width_sigmas * std);
            highs[i] = highs[i].max(center + width_sigmas * std);
        }
    }
    let mut origin = primary.clone();
    let mut half_widths = vec![0.0; d];
    for i in 0..d {
        let mid = 0.5 * (lows[i] + highs[i]);
        half_widths[i] = 0.5 * (highs[i] - lows[i]);
        for j in 0..d {
            origin[j] += axes[i * d + j] * mid;
        }
    }
    let mut quad_box = QuadBox {
        origin,
        axes,
        half_widths,
    };
    grow_until_boundary_negligible(problem, &mut quad_box, potential.value(primary));
    Ok(quad_box)
}

/// Expands box widths until the relative Gibbs weight at face probe
/// points drops below 1e-10.
fn grow_until_boundary_negligible(problem: &BrownianDynamics, quad_box: &mut QuadBox, v_min: f64) {
    let d = problem.dim();
    let inv_temp = 2.0 / (problem.sigma * problem.sigma);
    let mut point = vec![0.0; d];
    let probes = [-0.7, 0.0, 0.7];
    for _round in 0..60 {
        let mut worst_axis = None;
        let mut worst = 1e-10f64;
        for axis in 0..d {
            for &side in &[-1.0, 1.0] {
                // Probe a small grid on the face u_axis = side.
                let lateral = d - 1;
                let combos = probes.len().pow(lateral as u32);
                for combo in 0..combos {
                    let mut u = vec![0.0; d];
                    u[axis] = side;
                    let mut rest = combo;
                    for j in (0..d).filter(|&j| j != axis) {
                        u[j] = probes[rest % probes.len()];
                        rest /= probes.len();
                    }
                    quad_box.point(d, &u, &mut point);
                    let rel = (-inv_temp * (problem.potential.value(&point) - v_min)).exp();
                    if rel > worst {
                        worst = rel;
                        worst_axis = Some(axis);
                    }
                }
            }
        }
        match worst_axis {
            Some(axis) => quad_box.half_widths[axis] *= 1.3,
            None => return,
        }
    }
}

fn tensor_estimate(
    problem: &BrownianDynamics,
    phi: &dyn Fn(&[f64]) -> f64,
    quad_box: &QuadBox,
    nodes: usize,
    v_min: f64,
) -> (f64, f64, f64) {
    let d = problem.dim();
    let (gl_nodes, gl_weights) = gauss_legendre(nodes);
    let inv_temp = 2.0 / (problem.sigma * problem.sigma);
    let mut numerator = 0.0;
    let mut absolute = 0.0;
    let mut mass = 0.0;
    let mut u = vec![0.0; d];
    let mut x = vec![0.0; d];
    let total = nodes.pow(d as u32);
    for flat in 0..total {
        let mut idx = flat;
        let mut weight = 1.0;
        for ui in u.iter_mut() {
            let k = idx % nodes;
            idx /= nodes;
            *ui = gl_nodes[k];
            weight *= gl_weights[k];
        }
        quad_box.point(d, &u, &mut x);
        let w = weight * (-inv_temp * (problem.potential.value(&x) - v_min)).exp();
        let value = phi(&x);
        numerator += w * value;
        absolute += w * value.abs();
        mass += w;
    }
    (numerator, mass, absolute)
}

/// Gibbs average of `phi` over a given box, refining the per-axis node
/// count from `start_nodes` until two successive estimates agree to the
/// relative tolerance.
pub fn tensor_quadrature(
    problem: &BrownianDynamics,
    phi: &dyn Fn(&[f64]) -> f64,
    quad_box: &QuadBox,
    start_nodes: usize,
) -> Result<ReferenceValue, ReferenceError> {
    tensor_quadrature_with(problem, phi, quad_box, start_nodes, 1e-8)
}

fn tensor_quadrature_with(
    problem: &BrownianDynamics,
    phi: &dyn Fn(&[f64]) -> f64,
    quad_box: &QuadBox,
    start_nodes: usize,
    tol: f64,
) -> Result<ReferenceValue, ReferenceError> {
    let d = problem.dim();
    if d > 3 {
        return Err(ReferenceError::DimensionTooLarge(d));
    }
    let v_min = reference_level(problem, quad_box);
    let max_nodes = match d {
        1 => 4000,
        2 => 800,
        _ => 260,
    };
    let mut nodes = start_nodes.max(8);
    let (num0, mass0, _) = tensor_estimate(problem, phi, quad_box, nodes, v_min);
    let mut previous = num0 / mass0;
    let mut last_change = f64::INFINITY;
    while nodes * 2 <= max_nodes {
        nodes *= 2;
        let (num, mass, absolute) = tensor_estimate(problem, phi, quad_box, nodes, v_min);
        let current = num / mass;
        last_change = (current - previous).abs();
        // Scale by the mean absolute integrand, not just the average:
        // averages of oscillating integrands legitimately sit near zero.
        let scale = current.abs().max(absolute / mass).max(1e-300);
        if last_change <= tol * scale {
            return Ok(ReferenceValue {
                value: current,
                method: ReferenceMethod::TensorQuadrature,
                estimated_error: last_change,
            });
        }
        previous = current;
    }
    Err(ReferenceError::NoConvergence {
        target: tol,
        last_change,
    })
}

/// Smallest potential value seen on a coarse sweep of the box; used to
/// normalize exponents and avoid underflow.
fn reference_level(problem: &BrownianDynamics, quad_box: &QuadBox) -> f64 {
    let d = problem.dim();
    let probes = 9usize;
    let mut best = f64::INFINITY;
    let mut u = vec![0.0; d];
    let mut x = vec![0.0; d];
    for flat in 0..probes.pow(d as u32) {
        let mut idx = flat;
        for ui in u.iter_mut() {
            let k = idx % probes;
            idx /= probes;
            *ui = -1.0 + 2.0 * k as f64 / (probes - 1) as f64;
        }
        quad_box.point(d, &u, &mut x);
        best = best.min(problem.potential.value(&x));
    }
    best
}

/// Gibbs average with an automatically constructed box (8 local standard
/// deviations of slack) and the default 1e-8 refinement target.
pub fn gibbs_reference(
    problem: &BrownianDynamics,
    phi: &dyn Fn(&[f64]) -> f64,
) -> Result<ReferenceValue, ReferenceError> {
    let quad_box = build_box(problem, 8.0)?;
    tensor_quadrature_with(problem, phi, &quad_box, 16, 1e-8)
}

/// High-accuracy Gibbs average for operator-identity checks: wider box
/// (12 standard deviations, so polynomial integrands up to degree ~8 keep
/// their tails) and a 1e-12 refinement target.
pub fn gibbs_average(
    problem: &BrownianDynamics,
    integrand: &dyn Fn(&[f64]) -> f64,
) -> Result<f64, ReferenceError> {
    let quad_box = build_box(problem, 12.0)?;
    Ok(tensor_quadrature_with(problem, integrand, &quad_box, 16, 1e-12)?.value)
}

// ══════════════════════════════════════════════════════════════════════
// Radial quadrature
// ══════════════════════════════════════════════════════════════════════

/// Gibbs average of a radial observable under a radial potential in
/// dimension `d`, reduced to the line:
/// `int phi(r) e^{-2V(r)/sigma^2} r^{d-1} dr / int e^{-2V(r)/sigma^2} r^{d-1} dr`
/// over an explicit radial range.
pub fn radial_quadrature_on(
    v: &dyn Fn(f64) -> f64,
    phi: &dyn Fn(f64) -> f64,
    dim: usize,
    sigma: f64,
    r_lo: f64,
    r_hi: f64,
) -> Result<ReferenceValue, ReferenceError> {
    if !(r_hi > r_lo && r_lo >= 0.0) {
        return Err(ReferenceError::BadDomain(format!(
            "radial range [{r_lo}, {r_hi}]"
        )));
    }
    let inv_temp = 2.0 / (sigma * sigma);
    let power = (dim - 1) as f64;
    // Normalize by the largest log-weight on a scan to avoid underflow.
    let scan = 2048;
    let mut g_max = f64::NEG_INFINITY;
    for i in 0..=scan {
        let r = r_lo + (r_hi - r_lo) * i as f64 / scan as f64;
        if r <= 0.0 {
            continue;
        }
        g_max = g_max.max(-inv_temp * v(r) + power * r.ln());
    }
    let estimate = |n: usize| -> (f64, f64) {
        let (nodes, weights) = gauss_legendre(n);
        let mut numerator = 0.0;
        let mut mass = 0.0;
        for (t, w) in nodes.iter().zip(&weights) {
            let r = 0.5 * (r_lo + r_hi) + 0.5 * (r_hi - r_lo) * t;
            if r <= 0.0 {
                continue;
            }
            let log_weight = -inv_temp * v(r) + power * r.ln() - g_max;
            let wr = w * log_weight.exp();
            numerator += wr * phi(r);
            mass += wr;
        }
        (numerator, mass)
    };
    let mut nodes = 32;
    let (n0, m0) = estimate(nodes);
    let mut previous = n0 / m0;
    let mut last_change = f64::INFINITY;
    while nodes * 2 <= 8192 {
        nodes *= 2;
        let (num, mass) = estimate(nodes);
        let current = num / mass;
        last_change = (current - previous).abs();
        if last_change <= 1e-10 * current.abs().max(1e-12) {
            return Ok(ReferenceValue {
                value: current,
                method: ReferenceMethod::RadialQuadrature,
                estimated_error: last_change,
            });
        }
        previous = current;
    }
    Err(ReferenceError::NoConvergence {
        target: 1e-10,
        last_change,
    })
}

/// Radial Gibbs average with an automatic range: the integration window
/// is where the log-weight stays within 60 of its maximum (a relative
/// weight above ~1e-26).
pub fn radial_quadrature(
    v: &dyn Fn(f64) -> f64,
    phi: &dyn Fn(f64) -> f64,
    dim: usize,
    sigma: f64,
) -> Result<ReferenceValue, ReferenceError> {
    let inv_temp = 2.0 / (sigma * sigma);
    let power = (dim - 1) as f64;
    let log_weight = |r: f64| -inv_temp * v(r) + if r > 0.0 { power * r.ln() } else { 0.0 };
    // Locate the mode on an expanding scan.
    let mut r_max = 0.0;
    let mut g_max = f64::NEG_INFINITY;
    let mut hi = 4.0f64;
    loop {
        let steps = 4096;
        for i in 1..=steps {
            let r = hi * i as f64 / steps as f64;
            let g = log_weight(r);
            if g > g_max {
                g_max = g;
                r_max = r;
            }
        }
        // Grow the scan window until the weight at its end is negligible.
        if log_weight(hi) < g_max - 80.0 || hi > 1e6 {
            break;
        }
        hi *= 2.0;
    }
    if !g_max.is_finite() {
        return Err(ReferenceError::NoMinimizer);
    }
    let drop = 60.0;
    // In d=1 there is no r^{d-1} factor vanishing at 0, so the window may
    // extend all the way to the origin; otherwise walk left from the mode
    // until the weight becomes negligible.
    let mut lo: f64 = 0.0;
    if dim > 1 {
        let mut r = r_max;
        while r > 1e-12 && log_weight(r) > g_max - drop {
            r *= 0.8;
        }
        lo = r;
    }
    let mut r = r_max.max(1e-6);
    while log_weight(r) > g_max - drop && r < 1e7 {
        r *= 1.25;
    }
    radial_quadrature_on(v, phi, dim, sigma, lo, r)
}

// ══════════════════════════════════════════════════════════════════════
// Plain-text cache
// ══════════════════════════════════════════════════════════════════════

/// Looks up a cached reference value by exact key.
pub fn cache_lookup(path: &Path, key: &str) -> Option<(f64, f64)> {
    let text = fs::read_to_string(path).ok()?;
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        if parts.next() == Some(key) {
            let value = parts.next()?.parse().ok()?;
            let error = parts.next()?.parse().ok()?;
            return Some((value, error));
        }
    }
    None
}

/// Inserts or replaces a cache entry, keeping the file sorted by key.
pub fn cache_store(path: &Path, key: &str, value: f64, error: f64) -> Result<(), ReferenceError> {
    let mut entries: BTreeMap<String, String> = BTreeMap::new();
    if let Ok(text) = fs::read_to_string(path) {
        for line in text.lines() {
            if let Some((k, rest)) = line.split_once(' ') {
                entries.insert(k.to_string(), rest.to_string());
            }
        }
    }
    entries.insert(key.to_string(), format!("{value:.17e} {error:.17e}"));
    let mut out = String::new();
    for (k, rest) in &entries {
        out.push_str(k);
        out.push(' ');
        out.push_str(rest);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

// ══════════════════════════════════════════════════════════════════════
