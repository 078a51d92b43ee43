//! Truncated power series in `z` with exact arithmetic to truncation order.
//!
//! Used for invariant-measure defect expansions, where the leading nonzero
//! coefficient index is the claimed order of a method, and for synthesizing
//! deterministic postprocessors from `R(z)^{-1/2}`.

/// Coefficients `c_0 .. c_K` of a series `sum c_k z^k`, truncated at `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedSeries {
    coeffs: Vec<f64>,
}

impl TruncatedSeries {
    pub fn new(coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "series needs at least the constant term");
        Self { coeffs }
    }

    pub fn zero(order: usize) -> Self {
        Self::new(vec![0.0; order + 1])
    }

    pub fn one(order: usize) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        coeffs[0] = 1.0;
        Self::new(coeffs)
    }

    /// Embeds a polynomial, padding with zeros or truncating to `order`.
    pub fn from_polynomial(poly: &[f64], order: usize) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        for (k, c) in poly.iter().take(order + 1).enumerate() {
            coeffs[k] = *c;
        }
        Self::new(coeffs)
    }

    /// Truncation order `K`.
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// `c_k`, or 0 beyond the truncation order.
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Horner evaluation of the truncated polynomial.
    pub fn eval(&self, z: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c)
    }

    pub fn truncate(&self, order: usize) -> Self {
        Self::from_polynomial(&self.coeffs, order)
    }

    fn common_order(&self, other: &Self) -> usize {
        self.order().min(other.order())
    }

    pub fn add(&self, other: &Self) -> Self {
        let k = self.common_order(other);
        Self::new((0..=k).map(|i| self.coeff(i) + other.coeff(i)).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        let k = self.common_order(other);
        Self::new((0..=k).map(|i| self.coeff(i) - other.coeff(i)).collect())
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * factor).collect())
    }

    /// Cauchy product, truncated at the smaller order.
    pub fn mul(&self, other: &Self) -> Self {
        let k = self.common_order(other);
        let mut out = vec![0.0; k + 1];
        for (n, slot) in out.iter_mut().enumerate() {
            *slot = (0..=n).map(|i| self.coeff(i) * other.coeff(n - i)).sum();
        }
        Self::new(out)
    }

    /// Multiplication by `z` (coefficients shift up, top order drops out).
    pub fn mul_z(&self) -> Self {
        let k = self.order();
        let mut out = vec![0.0; k + 1];
        for i in 1..=k {
            out[i] = self.coeff(i - 1);
        }
        Self::new(out)
    }

    /// Reciprocal series; requires a nonzero constant term.
    pub fn recip(&self) -> Self {
        let c0 = self.coeff(0);
        assert!(
            c0.abs() > 1e-300,
            "series reciprocal requires a nonzero constant term"
        );
        let k = self.order();
        let mut out = vec![0.0; k + 1];
        out[0] = 1.0 / c0;
        for n in 1..=k {
            let acc: f64 = (1..=n).map(|i| self.coeff(i) * out[n - i]).sum();
            out[n] = -acc / c0;
        }
        Self::new(out)
    }

    pub fn div(&self, other: &Self) -> Self {
        self.mul(&other.recip())
    }

    /// Series square root; requires a positive constant term.
    pub fn sqrt(&self) -> Self {
        let c0 = self.coeff(0);
        assert!(c0 > 0.0, "series square root requires a positive constant term");
        let k = self.order();
        let mut out = vec![0.0; k + 1];
        out[0] = c0.sqrt();
        for n in 1..=k {
            let acc: f64 = (1..n).map(|i| out[i] * out[n - i]).sum();
            out[n] = (self.coeff(n) - acc) / (2.0 * out[0]);
        }
        Self::new(out)
    }

    /// Division by `z`; requires the constant term to vanish (up to
    /// roundoff relative to the largest coefficient).  Loses one order.
    pub fn div_z(&self) -> Self {
        let scale = self
            .coeffs
            .iter()
            .fold(1.0f64, |m, c| m.max(c.abs()));
        assert!(
            self.coeff(0).abs() <= 1e-12 * scale,
            "division by z requires a vanishing constant term, got {}",
            self.coeff(0)
        );
        assert!(self.order() >= 1, "cannot divide a constant series by z");
        Self::new(self.coeffs[1..].to_vec())
    }

    /// Index of the first coefficient exceeding `tol` in magnitude;
    /// `None` when the series vanishes to truncation order.
    pub fn leading_order(&self, tol: f64) -> Option<usize> {
        self.coeffs.iter().position(|c| c.abs() > tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_series_reciprocal() {
        // 1/(1 - z) = 1 + z + z^2 + ...
        let denom = TruncatedSeries::from_polynomial(&[1.0, -1.0], 8);
        let geo = denom.recip();
        for k in 0..=8 {
            assert!((geo.coeff(k) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sqrt_of_one_plus_z_matches_binomial_coefficients() {
        let s = TruncatedSeries::from_polynomial(&[1.0, 1.0], 6).sqrt();
        let expected = [1.0, 0.5, -1.0 / 8.0, 1.0 / 16.0, -5.0 / 128.0, 7.0 / 256.0];
        for (k, e) in expected.iter().enumerate() {
            assert!((s.coeff(k) - e).abs() < 1e-15, "coeff {k}");
        }
        // Squaring recovers 1 + z exactly to truncation order.
        let sq = s.mul(&s);
        assert!((sq.coeff(0) - 1.0).abs() < 1e-15);
        assert!((sq.coeff(1) - 1.0).abs() < 1e-15);
        for k in 2..=6 {
            assert!(sq.coeff(k).abs() < 1e-15);
        }
    }

    #[test]
    fn division_round_trips() {
        let p = TruncatedSeries::from_polynomial(&[1.0, 0.3, -0.7, 0.05], 10);
        let q = TruncatedSeries::from_polynomial(&[2.0, -1.1, 0.4], 10);
        let r = p.div(&q).mul(&q);
        for k in 0..=10 {
            assert!(
                (r.coeff(k) - p.coeff(k)).abs() < 1e-13,
                "coeff {k}: {} vs {}",
                r.coeff(k),
                p.coeff(k)
            );
        }
    }

    #[test]
    fn arithmetic_agrees_with_scalar_evaluation_at_small_z() {
        let p = TruncatedSeries::from_polynomial(&[1.0, 2.0, 0.5], 8);
        let q = TruncatedSeries::from_polynomial(&[1.0, -0.4, 0.2, 0.1], 8);
        let z = 1e-3;
        let prod = p.mul(&q);
        assert!((prod.eval(z) - p.eval(z) * q.eval(z)).abs() < 1e-15);
        let quot = p.div(&q);
        assert!((quot.eval(z) - p.eval(z) / q.eval(z)).abs() < 1e-15);
        let root = q.sqrt();
        assert!((root.eval(z) - q.eval(z).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn shift_operations_are_inverse() {
        let p = TruncatedSeries::from_polynomial(&[0.0, 1.0, -0.5, 0.25], 6);
        let back = p.div_z().mul_z();
        // mul_z after div_z zeroes the constant slot and keeps the rest.
        for k in 1..=5 {
            assert!((back.coeff(k) - p.coeff(k)).abs() < 1e-15);
        }
    }

    #[test]
    fn leading_order_detection() {
        let s = TruncatedSeries::new(vec![1e-16, -3e-17, 0.25, 1.0]);
        assert_eq!(s.leading_order(1e-14), Some(2));
        assert_eq!(TruncatedSeries::zero(4).leading_order(1e-14), None);
    }
}
