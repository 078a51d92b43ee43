//! Test observables with exact derivatives through fourth order.

use num_complex::Complex64;

use super::{Observable, WeakTaylorError};

fn check_dims(observable: &str, expected: usize, got: usize) -> Result<(), WeakTaylorError> {
    if expected == got {
        Ok(())
    } else {
        Err(WeakTaylorError::DimensionMismatch {
            observable: observable.to_string(),
            expected,
            got,
        })
    }
}

/// `phi(x) = x^n` on the line.
#[derive(Clone, Debug)]
pub struct Monomial1d {
    degree: u32,
}

impl Monomial1d {
    pub fn new(degree: u32) -> Self {
        Self { degree }
    }

    /// `d^k/dx^k x^n = n (n-1) ... (n-k+1) x^{n-k}`, zero once `k > n`.
    fn derivative(&self, x: f64, order: u32) -> f64 {
        if order > self.degree {
            return 0.0;
        }
        let mut coefficient = 1.0;
        for j in 0..order {
            coefficient *= (self.degree - j) as f64;
        }
        coefficient * x.powi((self.degree - order) as i32)
    }
}

impl Observable for Monomial1d {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, x: &[f64]) -> f64 {
        x[0].powi(self.degree as i32)
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.derivative(x[0], 1);
    }

    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.derivative(x[0], 2);
    }

    fn third_directional(&self, x: &[f64], u: &[f64], v: &[f64], w: &[f64]) -> f64 {
        self.derivative(x[0], 3) * u[0] * v[0] * w[0]
    }

    fn fourth_directional(&self, x: &[f64], u: &[f64], v: &[f64], w: &[f64], s: &[f64]) -> f64 {
        self.derivative(x[0], 4) * u[0] * v[0] * w[0] * s[0]
    }
}

/// `phi(x) = cos(kx) e^{-x^2/2}`, the real part of `psi = e^{ikx - x^2/2}`.
///
/// Every derivative is `Re(P_n(x) psi(x))`, where the complex polynomials
/// satisfy `P_0 = 1`, `P_{n+1} = P_n' + (ik - x) P_n`; the first four are
/// precomputed at construction.
#[derive(Clone, Debug)]
pub struct CosGaussian1d {
    k: f64,
    /// `polynomials[n]` holds the ascending coefficients of `P_n`.
    polynomials: Vec<Vec<Complex64>>,
}

impl CosGaussian1d {
    pub fn new(k: f64) -> Self {
        let ik = Complex64::new(0.0, k);
        let mut polynomials = vec![vec![Complex64::new(1.0, 0.0)]];
        for n in 0..4usize {
            let p = &polynomials[n];
            let mut next = vec![Complex64::new(0.0, 0.0); p.len() + 1];
            for (j, &coefficient) in p.iter().enumerate() {
                if j >= 1 {
                    // Derivative contribution of the x^j term.
                    next[j - 1] += coefficient * j as f64;
                }
                next[j] += ik * coefficient;
                next[j + 1] -= coefficient;
            }
            polynomials.push(next);
        }
        Self { k, polynomials }
    }

    fn derivative(&self, x: f64, order: usize) -> f64 {
        let psi = Complex64::new(-0.5 * x * x, self.k * x).exp();
        let mut p = Complex64::new(0.0, 0.0);
        for &coefficient in self.polynomials[order].iter().rev() {
            p = p * x + coefficient;
        }
        (p * psi).re
    }
}

impl Observable for CosGaussian1d {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.derivative(x[0], 0)
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.derivative(x[0], 1);
    }

    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.derivative(x[0], 2);
    }

    fn third_directional(&self, x: &[f64], u: &[f64], v: &[f64], w: &[f64]) -> f64 {
        self.derivative(x[0], 3) * u[0] * v[0] * w[0]
    }

    fn fourth_directional(&self, x: &[f64], u: &[f64], v: &[f64], w: &[f64], s: &[f64]) -> f64 {
        self.derivative(x[0], 4) * u[0] * v[0] * w[0] * s[0]
    }
}

/// `phi(x) = sum_i x_i^2` in any dimension.
#[derive(Clone, Debug)]
pub struct SumSquares {
    dim: usize,
}

impl SumSquares {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Observable for SumSquares {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = 2.0 * v;
        }
    }

    fn hessian_into(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.dim {
            out[i * self.dim + i] = 2.0;
        }
    }

    fn third_directional(&self, _x: &[f64], _u: &[f64], _v: &[f64], _w: &[f64]) -> f64 {
        0.0
    }

    fn fourth_directional(&self, _x: &[f64], _u: &[f64], _v: &[f64], _w: &[f64], _s: &[f64]) -> f64 {
        0.0
    }
}

/// `phi(x) = (x_2 + x_1^2)^2`, depending on the first two coordinates
/// only, written with hand-assembled derivative tensors; with
/// `s = x_2 + x_1^2` the only nonzero third partials are `d111 = 24 x_1`
/// and `d112 = 4`, the only fourth is `d1111 = 24`.
#[derive(Clone, Copy, Debug)]
pub struct CurvedMoment2d {
    dim: usize,
}

impl CurvedMoment2d {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2, "curved moment needs at least two coordinates");
        Self { dim }
    }
}

impl Observable for CurvedMoment2d {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        let s = x[1] + x[0] * x[0];
        s * s
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let s = x[1] + x[0] * x[0];
        out.fill(0.0);
        out[0] = 4.0 * x[0] * s;
        out[1] = 2.0 * s;
    }

    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let s = x[1] + x[0] * x[0];
        out.fill(0.0);
        out[0] = 4.0 * s + 8.0 * x[0] * x[0];
        out[1] = 4.0 * x[0];
        out[d] = 4.0 * x[0];
        out[d + 1] = 2.0;
    }

    fn third_directional(&self, x: &[f64], u: &[f64], v: &[f64], w: &[f64]) -> f64 {
        24.0 * x[0] * u[0] * v[0] * w[0]
            + 4.0 * (u[0] * v[0] * w[1] + u[0] * v[1] * w[0] + u[1] * v[0] * w[0])
    }

    fn fourth_directional(&self, _x: &[f64], u: &[f64], v: &[f64], w: &[f64], s: &[f64]) -> f64 {
        24.0 * u[0] * v[0] * w[0] * s[0]
    }
}

/// `phi(x) = (|x| - 1)^2`, the squared gap to the unit sphere.
///
/// Writing `phi = r^2 - 2r + 1`, every derivative beyond the quadratic
/// part comes from `r`: with `n = x/r` and directional projections
/// `alpha = n.u`, the third derivative of `r` is
/// `(3 alpha beta gamma - gamma u.v - beta u.w - alpha v.w) / r^2` and the
/// fourth follows by one more chain-rule pass.  Undefined at the origin.
#[derive(Clone, Copy, Debug)]
pub struct RadialGap {
    dim: usize,
}

impl RadialGap {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Observable for RadialGap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        let gap = norm(x) - 1.0;
        gap * gap
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let r = norm(x);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = 2.0 * xi - 2.0 * xi / r;
        }
    }

    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let r = norm(x);
        for i in 0..d {
            for j in 0..d {
                let id = if i == j { 1.0 } else { 0.0 };
                let nn = x[i] * x[j] / (r * r);
                out[i * d + j] = 2.0 * id - 2.0 * (id - nn) / r;
            }
        }
    }

    fn third_directional(&self, x: &[f64], u: &[f64], v: &[f64], w: &[f64]) -> f64 {
        let r = norm(x);
        let (a, b, g) = (dot(x, u) / r, dot(x, v) / r, dot(x, w) / r);
        let g3 = 3.0 * a * b * g - g * dot(u, v) - b * dot(u, w) - a * dot(v, w);
        -2.0 * g3 / (r * r)
    }

    fn fourth_directional(&self, x: &[f64], u: &[f64], v: &[f64], w: &[f64], s: &[f64]) -> f64 {
        let r = norm(x);
        let (a, b, g) = (dot(x, u) / r, dot(x, v) / r, dot(x, w) / r);
        let delta = dot(x, s) / r;
        let g3 = 3.0 * a * b * g - g * dot(u, v) - b * dot(u, w) - a * dot(v, w);
        let da = (dot(u, s) - a * delta) / r;
        let db = (dot(v, s) - b * delta) / r;
        let dg = (dot(w, s) - g * delta) / r;
        let dg3 = 3.0 * (da * b * g + a * db * g + a * b * dg)
            - dg * dot(u, v)
            - db * dot(u, w)
            - da * dot(v, w);
        -2.0 * (dg3 / (r * r) - 2.0 * delta * g3 / (r * r * r))
    }
}

/// `phi(x) = x_i`.
#[derive(Clone, Copy, Debug)]
pub struct Coordinate {
    dim: usize,
    index: usize,
}

impl Coordinate {
    pub fn new(dim: usize, index: usize) -> Self {
        assert!(index < dim);
        Self { dim, index }
    }
}

impl Observable for Coordinate {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        x[self.index]
    }

    fn gradient_into(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        out[self.index] = 1.0;
    }

    fn hessian_into(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn third_directional(&self, _x: &[f64], _u: &[f64], _v: &[f64], _w: &[f64]) -> f64 {
        0.0
    }

    fn fourth_directional(&self, _x: &[f64], _u: &[f64], _v: &[f64], _w: &[f64], _s: &[f64]) -> f64 {
        0.0
    }
}

/// Builds a named observable for a problem of the given dimension.
///
/// Names: `x`, `x2`, `x3`, `x4` (monomials, d = 1), `sum_squares` and
/// `radial_gap` (any d), `curved` (d = 2), `coord:<i>`, and `cosgauss` or
/// `cosgauss:<k>` (d = 1).
pub fn build_observable(name: &str, dim: usize) -> Result<Box<dyn Observable>, WeakTaylorError> {
    if let Some(index) = name.strip_prefix("coord:") {
        let index: usize = index
            .parse()
            .map_err(|_| WeakTaylorError::UnknownObservable(name.to_string()))?;
        if index >= dim {
            return Err(WeakTaylorError::DimensionMismatch {
                observable: name.to_string(),
                expected: index + 1,
                got: dim,
            });
        }
        return Ok(Box::new(Coordinate::new(dim, index)));
    }
    if name == "cosgauss" || name.starts_with("cosgauss:") {
        check_dims(name, 1, dim)?;
        let k = match name.strip_prefix("cosgauss:") {
            Some(text) => text
                .parse()
                .map_err(|_| WeakTaylorError::UnknownObservable(name.to_string()))?,
            None => 1.0,
        };
        return Ok(Box::new(CosGaussian1d::new(k)));
    }
    match name {
        "x" => {
            check_dims(name, 1, dim)?;
            Ok(Box::new(Monomial1d::new(1)))
        }
        "x2" => {
            check_dims(name, 1, dim)?;
            Ok(Box::new(Monomial1d::new(2)))
        }
        "x3" => {
            check_dims(name, 1, dim)?;
            Ok(Box::new(Monomial1d::new(3)))
        }
        "x4" => {
            check_dims(name, 1, dim)?;
            Ok(Box::new(Monomial1d::new(4)))
        }
        "sum_squares" => Ok(Box::new(SumSquares::new(dim))),
        "radial_gap" => Ok(Box::new(RadialGap::new(dim))),
        "curved" => {
            if dim < 2 {
                return Err(WeakTaylorError::DimensionMismatch {
                    observable: name.to_string(),
                    expected: 2,
                    got: dim,
                });
            }
            Ok(Box::new(CurvedMoment2d::new(dim)))
        }
        _ => Err(WeakTaylorError::UnknownObservable(name.to_string())),
    }
}
