//! Order-2 conditions for the invariant measure of the theta-family.
//!
//! A postprocessed theta-scheme with parameters `(theta, a, b, c)` samples
//! the invariant measure with second-order accuracy precisely when both
//! residuals
//!
//! ```text
//!     r1 = a^2 + 2 theta a + b - c^2
//!     r2 = a + b - c^2 - 1/4 + theta/2
//! ```
//!
//! vanish.  The solution family is closed-form and real only for
//! `theta = 0` or `theta >= 1/2`.  Residuals are also available in exact
//! rational arithmetic, which settles sign questions beyond any floating
//! doubt.

use num_rational::Rational64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OrderError {
    #[error("order-2 family has no real solution for theta in (0, 1/2), got {0}")]
    NoRealSolution(f64),
}

/// Residuals of the two order-2 conditions.
#[derive(Clone, Copy, Debug)]
pub struct OrderConditionResidual {
    pub r1: f64,
    pub r2: f64,
}

impl OrderConditionResidual {
    /// Both conditions met to the certification tolerance 1e-12.
    pub fn is_order2(&self) -> bool {
        self.r1.abs() <= 1e-12 && self.r2.abs() <= 1e-12
    }

    pub fn max_residual(&self) -> f64 {
        self.r1.abs().max(self.r2.abs())
    }
}

/// Evaluates both residuals in floating point.
pub fn check_order2(theta: f64, a: f64, b: f64, c: f64) -> OrderConditionResidual {
    let c2 = c * c;
    OrderConditionResidual {
        r1: a * a + 2.0 * theta * a + b - c2,
        r2: a + b - c2 - 0.25 + theta / 2.0,
    }
}

/// Evaluates both residuals exactly on rational inputs.  The noise weight
/// enters only through its square, so irrational `c` with rational `c^2`
/// (as in the implicit presets) stays exact.
pub fn check_order2_exact(
    theta: Rational64,
    a: Rational64,
    b: Rational64,
    c_squared: Rational64,
) -> (Rational64, Rational64) {
    let two = Rational64::from_integer(2);
    let quarter = Rational64::new(1, 4);
    let r1 = a * a + two * theta * a + b - c_squared;
    let r2 = a + b - c_squared - quarter + theta / two;
    (r1, r2)
}

/// Closed-form solutions `(a, b)` of the order-2 conditions for given
/// `theta` and `c`:
///
/// ```text
///     a = 1/2 - theta +- sqrt(2 theta (2 theta - 1))/2
///     b = c^2 - 1/4 + theta/2 -+ sqrt(2 theta (2 theta - 1))/2
/// ```
///
/// Both branches are returned (one entry when the discriminant vanishes);
/// real solutions exist only for `theta = 0` or `theta >= 1/2`.
pub fn solve_family(theta: f64, c: f64) -> Result<Vec<(f64, f64)>, OrderError> {
    let disc = 2.0 * theta * (2.0 * theta - 1.0);
    if disc < 0.0 {
        return Err(OrderError::NoRealSolution(theta));
    }
    let root = disc.sqrt() / 2.0;
    let a_base = 0.5 - theta;
    let b_base = c * c - 0.25 + theta / 2.0;
    if root == 0.0 {
        return Ok(vec![(a_base, b_base)]);
    }
    Ok(vec![
        (a_base + root, b_base - root),
        (a_base - root, b_base + root),
    ])
}

// ══════════════════════════════════════════════════════════════════════

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_analysis::{invariant_defect, method_functions};
    use crate::schemes::{preset, PostKind, SchemeSpec};
    use std::f64::consts::SQRT_2;

    fn splitmix(state: &mut u64) -> f64 {
        *state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z = z ^ (z >> 31);
        (z >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn published_solutions_have_zero_residuals() {
        // Fully implicit branch: a^2 + 2a = (2 sqrt(2) - 1)/4 = c^2.
        let a = -0.5 + SQRT_2 / 2.0;
        let c = (2.0 * SQRT_2 - 1.0).sqrt() / 2.0;
        let res = check_order2(1.0, a, 0.0, c);
        assert!(res.r1.abs() < 1e-15 && res.r2.abs() < 1e-15);

        // Trapezoidal family: a = 0, b = c^2.
        for c in [0.0, 0.3, 1.7] {
            let res = check_order2(0.5, 0.0, c * c, c);
            assert!(res.is_order2(), "c = {c}: {res:?}");
        }

        // Plain Euler-Maruyama misses the second condition by 1/4.
        let res = check_order2(0.0, 0.0, 0.0, 0.0);
        assert_eq!(res.r1, 0.0);
        assert_eq!(res.r2, -0.25);
        assert!(!res.is_order2());
    }

    #[test]
    fn exact_rational_residuals_settle_the_shift_coefficients() {
        let r = |n, d| Rational64::new(n, d);

        // Shifted Euler with trapezoidal noise: theta=0, a=1/2, c^2=1/4.
        let (r1, r2) = check_order2_exact(r(0, 1), r(1, 2), r(0, 1), r(1, 4));
        assert_eq!(r1, r(0, 1));
        assert_eq!(r2, r(0, 1));

        // Its deterministic variant: b = -1/4, c = 0.
        let (r1, r2) = check_order2_exact(r(0, 1), r(1, 2), r(-1, 4), r(0, 1));
        assert_eq!(r1, r(0, 1));
        assert_eq!(r2, r(0, 1));

        // The competing reading (a = 1/4, drift weight +1/4) fails both
        // conditions outright, so the adopted signs are forced.
        let (r1, r2) = check_order2_exact(r(0, 1), r(1, 4), r(1, 4), r(0, 1));
        assert_eq!(r1, r(5, 16));
        assert_eq!(r2, r(1, 4));
    }

    #[test]
    fn solve_family_reproduces_published_branches() {
        // theta = 1, c = 0.
        let sols = solve_family(1.0, 0.0).unwrap();
        assert_eq!(sols.len(), 2);
        let (a_plus, b_plus) = sols[0];
        assert!((a_plus - (-0.5 + SQRT_2 / 2.0)).abs() < 1e-15);
        assert!((b_plus - (0.25 - SQRT_2 / 2.0)).abs() < 1e-15);
        let (a_minus, b_minus) = sols[1];
        assert!((a_minus - (-0.5 - SQRT_2 / 2.0)).abs() < 1e-15);
        assert!((b_minus - (0.25 + SQRT_2 / 2.0)).abs() < 1e-15);

        // theta = 1/2: discriminant zero, single solution (0, c^2).
        let sols = solve_family(0.5, 0.7).unwrap();
        assert_eq!(sols.len(), 1);
        assert!(sols[0].0.abs() < 1e-15);
        assert!((sols[0].1 - 0.49).abs() < 1e-15);

        // theta = 0, c = 1/2: the shifted Euler preset.
        let sols = solve_family(0.0, 0.5).unwrap();
        assert_eq!(sols, vec![(0.5, 0.0)]);

        // Strictly between 0 and 1/2 there is no real branch.
        assert!(solve_family(0.3, 0.5).is_err());
        assert!(solve_family(0.49, 0.0).is_err());
    }

    #[test]
    fn solve_family_round_trips_through_the_checker() {
        let mut state = 42u64;
        for _ in 0..100 {
            let theta = 0.5 + 0.5 * splitmix(&mut state);
            let c = 2.0 * splitmix(&mut state);
            for (a, b) in solve_family(theta, c).unwrap() {
                let res = check_order2(theta, a, b, c);
                assert!(
                    res.max_residual() <= 1e-12,
                    "theta={theta} c={c} a={a} b={b}: {res:?}"
                );
            }
        }
    }

    #[test]
    fn presets_certify_as_expected() {
        for name in [
            "em_shift",
            "em_shift_det",
            "theta1_stab",
            "theta1_plain",
            "theta1_det",
            "theta_half",
        ] {
            let s = preset(name).unwrap();
            let res = check_order2(s.theta, s.a, s.b, s.c);
            assert!(res.is_order2(), "{name}: {res:?}");
        }
        for name in ["euler", "theta_std(0.3)", "theta_std(1.0)"] {
            let s = preset(name).unwrap();
            let res = check_order2(s.theta, s.a, s.b, s.c);
            assert!(!res.is_order2(), "{name} should be order 1: {res:?}");
        }
    }

    #[test]
    fn order2_parameters_give_second_order_linear_defect() {
        // Assembling any solution of the conditions with the general
        // postprocessor must push the invariant defect to O(z^2).
        let mut state = 7u64;
        for _ in 0..20 {
            let theta = 0.5 + 0.5 * splitmix(&mut state);
            let c = 1.5 * splitmix(&mut state);
            for (a, b) in solve_family(theta, c).unwrap() {
                let spec = SchemeSpec::new(
                    theta,
                    a,
                    b,
                    c,
                    PostKind::DeterministicImplicit,
                    "family",
                )
                .unwrap();
                let defect = invariant_defect(&method_functions(&spec)).unwrap();
                let order = defect.leading_order(1e-10);
                assert!(
                    order.map_or(true, |p| p >= 2),
                    "theta={theta} a={a} b={b} c={c}: defect order {order:?}"
                );
            }
        }
    }
}
