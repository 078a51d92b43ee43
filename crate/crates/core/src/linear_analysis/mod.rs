//! Exact accuracy and stability analysis on the scalar test equation
//! `dX = -gamma X dt + sigma dW`, `gamma > 0`.
//!
//! Every theta-family scheme reduces on this equation to the linear
//! recursion `X_{n+1} = A(z) X_n + B(z) sigma sqrt(h) xi_n` with
//! `z = -gamma h`, and every postprocessor to
//! `Xbar_n = C(z) X_n + D(z) sigma sqrt(h) xi_n`.  All four functions are
//! rational in `z`, so accuracy for the invariant measure and the various
//! stability notions become statements about rational functions; this
//! module evaluates them both in closed form and as truncated series.

pub mod series;

pub use series::TruncatedSeries;

use thiserror::Error;

use crate::schemes::{PostKind, SchemeSpec};

/// Default series truncation order; enough to classify every preset with
/// several orders of margin.
pub const DEFAULT_TRUNCATION: usize = 8;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("pole encountered at z = {0}")]
    Pole(f64),
    #[error("mean-square unstable at z = {0} (|A| = {1})")]
    Unstable(f64, f64),
    #[error("method is not consistent: A(z) = 1 + z + O(z^2) required")]
    NotConsistent,
    #[error("variance amplification at z = 0 must be positive, got {0}")]
    NonPositiveAmplification(f64),
}

// ══════════════════════════════════════════════════════════════════════
// Rational functions of z
// ══════════════════════════════════════════════════════════════════════

/// Ratio of real polynomials in `z`, coefficients in ascending order.
#[derive(Clone, Debug)]
pub struct RationalFn {
    num: Vec<f64>,
    den: Vec<f64>,
}

fn poly_trim(mut p: Vec<f64>) -> Vec<f64> {
    let scale = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let tol = 1e-14 * scale;
    while p.len() > 1 && p.last().unwrap().abs() <= tol {
        p.pop();
    }
    p
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0))
        .collect()
}

fn poly_eval(p: &[f64], z: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * z + c)
}

impl RationalFn {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Self {
        let num = poly_trim(num);
        let den = poly_trim(den);
        assert!(
            den.iter().any(|c| c.abs() > 0.0),
            "rational function needs a nonzero denominator"
        );
        Self { num, den }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(vec![value], vec![1.0])
    }

    pub fn numerator(&self) -> &[f64] {
        &self.num
    }

    pub fn denominator(&self) -> &[f64] {
        &self.den
    }

    pub fn eval(&self, z: f64) -> f64 {
        poly_eval(&self.num, z) / poly_eval(&self.den, z)
    }

    /// Evaluation with a pole guard on the denominator.
    pub fn eval_checked(&self, z: f64) -> Result<f64, AnalysisError> {
        let den = poly_eval(&self.den, z);
        let scale = self
            .den
            .iter()
            .enumerate()
            .fold(0.0f64, |m, (k, c)| m.max((c * z.powi(k as i32)).abs()))
            .max(1e-300);
        if den.abs() <= 1e-12 * scale {
            return Err(AnalysisError::Pole(z));
        }
        Ok(poly_eval(&self.num, z) / den)
    }

    /// Series expansion around `z = 0`; the denominator must not vanish
    /// there.
    pub fn series(&self, order: usize) -> TruncatedSeries {
        let num = TruncatedSeries::from_polynomial(&self.num, order);
        let den = TruncatedSeries::from_polynomial(&self.den, order);
        num.div(&den)
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self::new(
            poly_mul(&self.num, &other.num),
            poly_mul(&self.den, &other.den),
        )
    }

    /// Signed limit as `z -> -infinity`, by the degree rule.
    pub fn limit_neg_infinity(&self) -> f64 {
        let dn = self.num.len() - 1;
        let dd = self.den.len() - 1;
        let ln = self.num[dn];
        let ld = self.den[dd];
        if ln == 0.0 {
            // Numerator is identically zero after trimming.
            return 0.0;
        }
        match dn.cmp(&dd) {
            std::cmp::Ordering::Less => 0.0,
            std::cmp::Ordering::Equal => ln / ld,
            std::cmp::Ordering::Greater => {
                let sign = (ln / ld).signum() * if (dn - dd) % 2 == 1 { -1.0 } else { 1.0 };
                sign * f64::INFINITY
            }
        }
    }
}

/// A method function in both closed form and expanded form.
#[derive(Clone, Debug)]
pub struct FunctionPair {
    pub rational: RationalFn,
    pub series: TruncatedSeries,
}

impl FunctionPair {
    fn from_rational(rational: RationalFn, order: usize) -> Self {
        let series = rational.series(order);
        Self { rational, series }
    }
}

/// The four linear-response functions of a postprocessed scheme:
/// kernel `X_{n+1} = A X_n + B sigma sqrt(h) xi_n`, postprocessor
/// `Xbar_n = C X_n + D sigma sqrt(h) xi_n`.
#[derive(Clone, Debug)]
pub struct LinearMethodFunctions {
    pub a: FunctionPair,
    pub b: FunctionPair,
    pub c: FunctionPair,
    pub d: FunctionPair,
    pub truncation: usize,
}

/// Closed forms of A, B, C, D for a theta-family scheme, expanded to the
/// default truncation order.
pub fn method_functions(spec: &SchemeSpec) -> LinearMethodFunctions {
    method_functions_with_order(spec, DEFAULT_TRUNCATION)
}

pub fn method_functions_with_order(spec: &SchemeSpec, order: usize) -> LinearMethodFunctions {
    let theta = spec.theta;
    let kernel_den = vec![1.0, -theta];
    let a = RationalFn::new(vec![1.0, 1.0 - theta], kernel_den.clone());
    let b = RationalFn::new(vec![1.0, spec.a], kernel_den);
    let (c, d) = match spec.post_kind {
        PostKind::None => (RationalFn::constant(1.0), RationalFn::constant(0.0)),
        PostKind::NoiseShift => (RationalFn::constant(1.0), RationalFn::constant(0.5)),
        PostKind::StochasticPlain => (RationalFn::constant(1.0), RationalFn::constant(spec.c)),
        PostKind::StochasticStabilized => (
            RationalFn::constant(1.0),
            RationalFn::new(vec![spec.c], vec![1.0, -1.0]),
        ),
        PostKind::DeterministicImplicit => {
            let den = vec![1.0, -theta * spec.b];
            (
                RationalFn::new(vec![1.0, (1.0 - theta) * spec.b], den.clone()),
                RationalFn::new(vec![spec.c], den),
            )
        }
    };
    LinearMethodFunctions {
        a: FunctionPair::from_rational(a, order),
        b: FunctionPair::from_rational(b, order),
        c: FunctionPair::from_rational(c, order),
        d: FunctionPair::from_rational(d, order),
        truncation: order,
    }
}

// ══════════════════════════════════════════════════════════════════════
// Invariant-measure accuracy
// ══════════════════════════════════════════════════════════════════════

/// The variance amplification `R(z) = 2 z B(z)^2 / (A(z)^2 - 1)`: the
/// stationary kernel variance is `(sigma^2 / 2 gamma) R(z)` for stable `z`.
pub fn variance_amplification(fns: &LinearMethodFunctions) -> Result<FunctionPair, AnalysisError> {
    // Consistency A = 1 + z + O(z^2) makes z divide A^2 - 1 exactly.
    let a0 = fns.a.series.coeff(0);
    let a1 = fns.a.series.coeff(1);
    if (a0 - 1.0).abs() > 1e-12 || (a1 - 1.0).abs() > 1e-12 {
        return Err(AnalysisError::NotConsistent);
    }
    let pa = fns.a.rational.numerator();
    let qa = fns.a.rational.denominator();
    let pb = fns.b.rational.numerator();
    let qb = fns.b.rational.denominator();
    // A^2 - 1 = (pa^2 - qa^2)/qa^2; the numerator has a root at z = 0.
    let diff = poly_sub(&poly_mul(pa, pa), &poly_mul(qa, qa));
    let scale = diff.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if diff[0].abs() > 1e-12 * scale.max(1e-300) {
        return Err(AnalysisError::NotConsistent);
    }
    let diff_over_z = diff[1..].to_vec();
    // R = 2 pb^2 qa^2 / (qb^2 (pa^2 - qa^2)/z).
    let num = poly_mul(&poly_mul(pb, pb), &poly_mul(qa, qa))
        .iter()
        .map(|c| 2.0 * c)
        .collect();
    let den = poly_mul(&poly_mul(qb, qb), &diff_over_z);
    let rational = RationalFn::new(num, den);
    let r0 = rational.series(0).coeff(0);
    if !(r0 > 0.0) {
        return Err(AnalysisError::NonPositiveAmplification(r0));
    }
    Ok(FunctionPair::from_rational(rational, fns.truncation))
}

/// Defect of the postprocessed invariant-measure identity,
/// `R(z) C(z)^2 - 2 z D(z)^2 - 1`: its leading order is the order of the
/// scheme for the invariant measure of the test equation.
pub fn invariant_defect(fns: &LinearMethodFunctions) -> Result<TruncatedSeries, AnalysisError> {
    let r = variance_amplification(fns)?.series;
    let c2 = fns.c.series.mul(&fns.c.series);
    let d2 = fns.d.series.mul(&fns.d.series);
    let one = TruncatedSeries::one(fns.truncation);
    Ok(r.mul(&c2).sub(&d2.mul_z().scale(2.0)).sub(&one))
}

/// Closed-form stationary second moment of the postprocessed chain,
/// `(sigma^2 / 2 gamma) C^2 |R| + h sigma^2 D^2` at `z = -gamma h`.
pub fn stationary_variance(
    fns: &LinearMethodFunctions,
    gamma: f64,
    sigma: f64,
    h: f64,
) -> Result<f64, AnalysisError> {
    assert!(gamma > 0.0 && h > 0.0);
    let z = -gamma * h;
    let a = fns.a.rational.eval_checked(z)?;
    if a.abs() >= 1.0 {
        return Err(AnalysisError::Unstable(z, a.abs()));
    }
    let r = variance_amplification(fns)?.rational.eval_checked(z)?;
    let c = fns.c.rational.eval_checked(z)?;
    let d = fns.d.rational.eval_checked(z)?;
    Ok(sigma * sigma / (2.0 * gamma) * c * c * r.abs() + h * sigma * sigma * d * d)
}

// ══════════════════════════════════════════════════════════════════════
// Stability
// ══════════════════════════════════════════════════════════════════════

/// Mean-square stability of the kernel at a given `z = -gamma h`.
pub fn is_mean_square_stable(fns: &LinearMethodFunctions, z: f64) -> bool {
    fns.a.rational.eval(z).abs() < 1.0
}

/// Numerical A-stability check: `|A(z)| < 1` on a logarithmic grid
/// `z in [-1e8, -1e-4]` together with `|lim_{z->-inf} A(z)| <= 1`.
pub fn a_stability_scan(fns: &LinearMethodFunctions) -> bool {
    let decades = 12.0;
    let points = 241;
    for k in 0..points {
        let exponent = -4.0 + decades * k as f64 / (points - 1) as f64;
        let z = -(10.0f64).powf(exponent);
        if !is_mean_square_stable(fns, z) {
            return false;
        }
    }
    fns.a.rational.limit_neg_infinity().abs() <= 1.0 + 1e-12
}

/// Stiff-limit behaviour.
#[derive(Clone, Copy, Debug)]
pub struct LStability {
    /// `lim_{z -> -inf} A(z)`; zero means the kernel is L-stable.
    pub kernel_limit: f64,
    /// `lim_{z -> -inf} (C(z)^2 A(z)^2 + D(z)^2)`: joint damping of the
    /// initial condition and the postprocessor noise at a fixed noise
    /// budget `sigma sqrt(h)`.  Zero means the postprocessed output
    /// forgets both in the stiff limit.
    pub postprocessed_damping: f64,
}

impl LStability {
    pub fn kernel_l_stable(&self) -> bool {
        self.kernel_limit.abs() < 1e-12
    }

    pub fn postprocessor_damped(&self) -> bool {
        self.postprocessed_damping < 1e-12
    }
}

pub fn l_stability(fns: &LinearMethodFunctions) -> LStability {
    let kernel_limit = fns.a.rational.limit_neg_infinity();
    let ca = fns.c.rational.mul(&fns.a.rational).limit_neg_infinity();
    let d = fns.d.rational.limit_neg_infinity();
    LStability {
        kernel_limit,
        postprocessed_damping: ca * ca + d * d,
    }
}

// ══════════════════════════════════════════════════════════════════════
// Postprocessor synthesis
// ══════════════════════════════════════════════════════════════════════

/// Coefficients of the deterministic postprocessor polynomial `C(z)` of
/// degree `< s` obtained by truncating `R(z)^{-1/2}`; with `D = 0` the
/// resulting invariant-measure defect is `O(z^s)`.
pub fn synthesize_postprocessor(
    fns: &LinearMethodFunctions,
    s: usize,
) -> Result<Vec<f64>, AnalysisError> {
    assert!(s >= 1, "postprocessor degree bound must be at least 1");
    let r = variance_amplification(fns)?;
    let order = fns.truncation.max(s);
    let inv_sqrt = r.rational.series(order).recip().sqrt();
    Ok(inv_sqrt.coeffs()[..s].to_vec())
}

// ══════════════════════════════════════════════════════════════════════

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schemes::{preset, PostKind, SchemeSpec};

    fn splitmix(state: &mut u64) -> f64 {
        *state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z = z ^ (z >> 31);
        (z >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn em_shift_closed_forms() {
        let fns = method_functions(&preset("em_shift").unwrap());
        let z = -0.3;
        assert!((fns.a.rational.eval(z) - 0.7).abs() < 1e-15);
        assert!((fns.b.rational.eval(z) - 0.85).abs() < 1e-15);
        assert!((fns.c.rational.eval(z) - 1.0).abs() < 1e-15);
        assert!((fns.d.rational.eval(z) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn euler_and_theta1_closed_forms() {
        let fns = method_functions(&preset("euler").unwrap());
        let z = -0.4;
        assert!((fns.a.rational.eval(z) - 0.6).abs() < 1e-15);
        assert!((fns.b.rational.eval(z) - 1.0).abs() < 1e-15);

        let spec = preset("theta1_stab").unwrap();
        let fns = method_functions(&spec);
        assert!((fns.a.rational.eval(z) - 1.0 / 1.4).abs() < 1e-15);
        let b_exact = (1.0 + spec.a * z) / 1.4;
        assert!((fns.b.rational.eval(z) - b_exact).abs() < 1e-15);
        let d_exact = spec.c / 1.4;
        assert!((fns.d.rational.eval(z) - d_exact).abs() < 1e-15);
    }

    #[test]
    fn series_agree_with_rational_evaluators_at_small_z() {
        let presets = [
            "euler",
            "theta_half",
            "em_shift",
            "em_shift_det",
            "theta1_stab",
            "theta1_plain",
            "theta1_det",
            "theta_std(0.3)",
        ];
        let mut state = 17u64;
        for name in presets {
            let fns = method_functions(&preset(name).unwrap());
            for _ in 0..10 {
                let z = -1e-4 - 9e-4 * splitmix(&mut state);
                for (label, f) in [
                    ("A", &fns.a),
                    ("B", &fns.b),
                    ("C", &fns.c),
                    ("D", &fns.d),
                ] {
                    let exact = f.rational.eval(z);
                    let approx = f.series.eval(z);
                    let tol = 1e-12 * exact.abs().max(1e-3);
                    assert!(
                        (exact - approx).abs() <= tol,
                        "{name} {label} at z={z}: {exact} vs {approx}"
                    );
                }
            }
        }
    }

    #[test]
    fn variance_amplification_examples() {
        // Euler: R = 1/(1 + z/2).
        let fns = method_functions(&preset("euler").unwrap());
        let r = variance_amplification(&fns).unwrap();
        assert!((r.rational.eval(-0.5) - 1.0 / 0.75).abs() < 1e-14);

        // em_shift: R = 1 + z/2 exactly.
        let fns = method_functions(&preset("em_shift").unwrap());
        let r = variance_amplification(&fns).unwrap();
        assert!((r.series.coeff(0) - 1.0).abs() < 1e-14);
        assert!((r.series.coeff(1) - 0.5).abs() < 1e-14);
        for k in 2..=8 {
            assert!(r.series.coeff(k).abs() < 1e-14, "coeff {k}");
        }
        assert!((r.rational.eval(-1.2) - 0.4).abs() < 1e-14);

        // Trapezoidal method: R identically 1.
        let fns = method_functions(&preset("theta_half").unwrap());
        let r = variance_amplification(&fns).unwrap();
        for z in [-0.1, -1.0, -7.3] {
            assert!((r.rational.eval(z) - 1.0).abs() < 1e-13, "z = {z}");
        }
    }

    #[test]
    fn variance_amplification_pole_detected() {
        // Euler at z = -2 sits on |A| = 1.
        let fns = method_functions(&preset("euler").unwrap());
        let r = variance_amplification(&fns).unwrap();
        assert!(matches!(
            r.rational.eval_checked(-2.0),
            Err(AnalysisError::Pole(_))
        ));
    }

    #[test]
    fn invariant_defect_orders_match_theory() {
        let tol = 1e-13;

        // em_shift and theta_half: defect vanishes identically.
        for name in ["em_shift", "theta_half"] {
            let defect =
                invariant_defect(&method_functions(&preset(name).unwrap())).unwrap();
            assert_eq!(defect.leading_order(tol), None, "{name}");
        }

        // euler: defect = -z/2 + ...
        let defect = invariant_defect(&method_functions(&preset("euler").unwrap())).unwrap();
        assert_eq!(defect.leading_order(tol), Some(1));
        assert!((defect.coeff(1) + 0.5).abs() < 1e-14);

        // theta1_stab: O(z^2) with coefficient 3/2 - 2 sqrt(2).
        let defect =
            invariant_defect(&method_functions(&preset("theta1_stab").unwrap())).unwrap();
        assert_eq!(defect.leading_order(tol), Some(2));
        let expected = 1.5 - 2.0 * std::f64::consts::SQRT_2;
        assert!((defect.coeff(2) - expected).abs() < 1e-12);

        // theta1_plain shares the kernel, so the same leading coefficient
        // appears (the stabilization changes D only at higher order).
        let defect =
            invariant_defect(&method_functions(&preset("theta1_plain").unwrap())).unwrap();
        assert_eq!(defect.leading_order(tol), Some(2));

        // theta1_det: O(z^3) with coefficient 1/4.
        let defect =
            invariant_defect(&method_functions(&preset("theta1_det").unwrap())).unwrap();
        assert_eq!(defect.leading_order(tol), Some(3));
        assert!((defect.coeff(3) - 0.25).abs() < 1e-12);

        // em_shift_det: O(z^2), coefficients -3/16 then 1/32.
        let defect =
            invariant_defect(&method_functions(&preset("em_shift_det").unwrap())).unwrap();
        assert_eq!(defect.leading_order(tol), Some(2));
        assert!((defect.coeff(2) + 3.0 / 16.0).abs() < 1e-14);
        assert!((defect.coeff(3) - 1.0 / 32.0).abs() < 1e-14);
    }

    #[test]
    fn stationary_variance_examples() {
        let sigma = std::f64::consts::SQRT_2;

        // Trapezoidal: exact for every stable h.
        let fns = method_functions(&preset("theta_half").unwrap());
        for h in [0.1, 0.5, 2.0] {
            let v = stationary_variance(&fns, 1.0, sigma, h).unwrap();
            assert!((v - 1.0).abs() < 1e-14, "h = {h}");
        }

        // em_shift: defect 0 implies the exact value 1.
        let fns = method_functions(&preset("em_shift").unwrap());
        let v = stationary_variance(&fns, 1.0, sigma, 0.5).unwrap();
        assert!((v - 1.0).abs() < 1e-14);

        // Euler without postprocessing: |R(-0.5)| = 4/3.
        let fns = method_functions(&preset("euler").unwrap());
        let v = stationary_variance(&fns, 1.0, sigma, 0.5).unwrap();
        assert!((v - 4.0 / 3.0).abs() < 1e-14);

        // Unstable step size is refused.
        assert!(matches!(
            stationary_variance(&fns, 1.0, sigma, 2.5),
            Err(AnalysisError::Unstable(_, _))
        ));
    }

    #[test]
    fn mean_square_and_a_stability() {
        let euler = method_functions(&preset("euler").unwrap());
        assert!(is_mean_square_stable(&euler, -1.9));
        assert!(!is_mean_square_stable(&euler, -2.1));
        assert!(!a_stability_scan(&euler));

        for theta in [0.5, 0.7, 1.0] {
            let spec = SchemeSpec::new(theta, 0.0, 0.0, 0.0, PostKind::None, "t").unwrap();
            assert!(a_stability_scan(&method_functions(&spec)), "theta = {theta}");
        }
        for theta in [0.0, 0.25, 0.49] {
            let spec = SchemeSpec::new(theta, 0.0, 0.0, 0.0, PostKind::None, "t").unwrap();
            assert!(!a_stability_scan(&method_functions(&spec)), "theta = {theta}");
        }
    }

    #[test]
    fn l_stability_classification() {
        // Kernel limits.
        let l = l_stability(&method_functions(&preset("theta_std(1.0)").unwrap()));
        assert!(l.kernel_l_stable());
        let l = l_stability(&method_functions(&preset("theta_half").unwrap()));
        assert!((l.kernel_limit + 1.0).abs() < 1e-14);
        assert!(!l.kernel_l_stable());
        let l = l_stability(&method_functions(&preset("euler").unwrap()));
        assert!(l.kernel_limit.is_infinite());

        // Postprocessed damping: both theta1 postprocessors with rational
        // decay are damped, the plain one and the explicit schemes not.
        let stab = l_stability(&method_functions(&preset("theta1_stab").unwrap()));
        assert!(stab.kernel_l_stable() && stab.postprocessor_damped());
        let det = l_stability(&method_functions(&preset("theta1_det").unwrap()));
        assert!(det.kernel_l_stable() && det.postprocessor_damped());

        let plain = l_stability(&method_functions(&preset("theta1_plain").unwrap()));
        let c = preset("theta1_plain").unwrap().c;
        assert!(plain.kernel_l_stable());
        assert!((plain.postprocessed_damping - c * c).abs() < 1e-14);
        assert!(!plain.postprocessor_damped());

        let half = l_stability(&method_functions(&preset("theta_half").unwrap()));
        assert!((half.postprocessed_damping - 1.0).abs() < 1e-14);
        let shift = l_stability(&method_functions(&preset("em_shift").unwrap()));
        assert!(shift.postprocessed_damping.is_infinite());
    }

    #[test]
    fn synthesis_reproduces_published_polynomials() {
        // Euler, s = 3: C = 1 + z/4 - z^2/32.
        let fns = method_functions(&preset("euler").unwrap());
        let c = synthesize_postprocessor(&fns, 3).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-14);
        assert!((c[1] - 0.25).abs() < 1e-14);
        assert!((c[2] + 1.0 / 32.0).abs() < 1e-14);

        // Trapezoidal: C = 1 at any order.
        let fns = method_functions(&preset("theta_half").unwrap());
        let c = synthesize_postprocessor(&fns, 4).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-14);
        for v in &c[1..] {
            assert!(v.abs() < 1e-14);
        }

        // em_shift kernel with D = 0, s = 2: C = 1 - z/4, i.e. b = -1/4.
        let fns = method_functions(&preset("em_shift").unwrap());
        let c = synthesize_postprocessor(&fns, 2).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-14);
        assert!((c[1] + 0.25).abs() < 1e-14);
    }

    #[test]
    fn synthesized_postprocessor_cancels_defect_to_order_s() {
        for name in ["euler", "em_shift", "theta1_plain"] {
            let fns = method_functions(&preset(name).unwrap());
            for s in 1..=5 {
                let c = synthesize_postprocessor(&fns, s).unwrap();
                let r = variance_amplification(&fns).unwrap().series;
                let c_series = TruncatedSeries::from_polynomial(&c, fns.truncation);
                let defect = r
                    .mul(&c_series.mul(&c_series))
                    .sub(&TruncatedSeries::one(fns.truncation));
                let order = defect.leading_order(1e-12);
                assert!(
                    order.map_or(true, |p| p >= s),
                    "{name} s={s}: defect order {order:?}"
                );
            }
        }
    }
}
