//! One-step kernels and postprocessor maps.
//!
//! The kernel is the modified theta-method
//!
//! ```text
//!     X_{n+1} = X_n + h (1-theta) f(X_n + a sigma sqrt(h) xi_n)
//!                   + h theta     f(X_{n+1} + a sigma sqrt(h) xi_n)
//!                   + sigma sqrt(h) xi_n,
//! ```
//!
//! which for `a = 0` is the standard stochastic theta-method.  A cheap
//! postprocessor map turns each chain state `X_n` into the sample `Xbar_n`
//! actually fed to the estimator; the chain itself never sees `Xbar`.  The
//! implicit stage is solved in the variable `Y = X_{n+1} + a sigma sqrt(h) xi_n`,
//! whose Newton matrix `I - h theta f'(Y)` coincides for `theta = 1` with the
//! stabilization matrix `J_n`, so those LU factors are kept on the state and
//! reused by the stabilized postprocessor at no extra cost.

use std::f64::consts::SQRT_2;

use thiserror::Error;

use crate::model::BrownianDynamics;
use crate::newton::{solve_fixed_point, LuFactors, NewtonConfig, NewtonError};

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("newton solve failed in {context}: {source}")]
    Newton {
        context: &'static str,
        #[source]
        source: NewtonError,
    },
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error("invalid scheme parameter: {0}")]
    InvalidParameter(String),
}

/// Postprocessor attached to a scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PostKind {
    /// `Xbar = X` (the raw chain).
    None,
    /// `Xbar = X + (sigma/2) sqrt(h) xi`, the trapezoidal noise shift.
    NoiseShift,
    /// `Xbar = X + c sigma sqrt(h) xi`.
    StochasticPlain,
    /// `Xbar = X + c sigma sqrt(h) J_n^{-1} xi` with
    /// `J_n = I - h f'(X_n + a sigma sqrt(h) xi_{n-1})`.
    StochasticStabilized,
    /// `Xbar = X + b h ((1-theta) f(X) + theta f(Xbar)) + c sigma sqrt(h) xi`.
    DeterministicImplicit,
}

/// Full parameter set of a postprocessed theta-method.
#[derive(Clone, Debug)]
pub struct SchemeSpec {
    /// Implicitness of the kernel, in `[0, 1]`.
    pub theta: f64,
    /// Noise shift inside the drift argument.
    pub a: f64,
    /// Postprocessor drift weight.
    pub b: f64,
    /// Postprocessor noise weight (nonnegative).
    pub c: f64,
    pub post_kind: PostKind,
    pub label: String,
}

impl SchemeSpec {
    pub fn new(
        theta: f64,
        a: f64,
        b: f64,
        c: f64,
        post_kind: PostKind,
        label: &str,
    ) -> Result<Self, SchemeError> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(SchemeError::InvalidParameter(format!(
                "theta must lie in [0,1], got {theta}"
            )));
        }
        if !(c >= 0.0) {
            return Err(SchemeError::InvalidParameter(format!(
                "c must be nonnegative, got {c}"
            )));
        }
        Ok(Self {
            theta,
            a,
            b,
            c,
            post_kind,
            label: label.to_string(),
        })
    }
}

/// State of a discrete chain: the current point plus what the stabilized
/// postprocessor needs to rebuild (or reuse) its Jacobian.
#[derive(Clone, Debug)]
pub struct ChainState {
    /// Current point `X_n`.
    pub x: Vec<f64>,
    /// Noise `xi_{n-1}` consumed by the step that produced `x`; absent at
    /// the initial state, where `J_0 = I - h f'(X_0)` is used instead.
    pub prev_xi: Option<Vec<f64>>,
    /// Step index `n`.
    pub step: usize,
    /// LU factors of the kernel's Newton matrix `I - h theta f'(Y)`,
    /// cached only when `theta = 1` where it equals `J_n`.
    pub(crate) stage_factors: Option<LuFactors>,
}

impl ChainState {
    pub fn initial(x0: &[f64]) -> Self {
        Self {
            x: x0.to_vec(),
            prev_xi: None,
            step: 0,
            stage_factors: None,
        }
    }
}

/// Work counters accumulated over one `step_*` call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepStats {
    /// Dense LU factorizations (kernel Newton plus postprocessor).
    pub factorizations: usize,
    /// Newton update steps in the kernel stage solve.
    pub newton_iterations: usize,
}

/// Result of one step: the advanced state and the postprocessed sample of
/// the *pre-step* state, which is what invariant-measure averages consume.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub next: ChainState,
    /// `Xbar_n`, the postprocessed sample associated with the state the
    /// step started from.
    pub processed: Vec<f64>,
    pub xi_used: Vec<f64>,
    pub stats: StepStats,
}

// ══════════════════════════════════════════════════════════════════════
// Kernels
// ══════════════════════════════════════════════════════════════════════

/// One step of the standard stochastic theta-method (`a = 0`), followed by
/// the configured postprocessing of the pre-step state.
pub fn step_theta_standard(
    problem: &BrownianDynamics,
    spec: &SchemeSpec,
    h: f64,
    state: &ChainState,
    xi: &[f64],
    newton: &NewtonConfig,
) -> Result<StepOutput, SchemeError> {
    debug_assert_eq!(spec.a, 0.0, "standard theta-method requires a = 0");
    step_kernel(problem, spec, 0.0, h, state, xi, newton)
}

/// One step of the modified theta-method (noise-shifted drift argument),
/// followed by the configured postprocessing of the pre-step state.
pub fn step_theta_modified(
    problem: &BrownianDynamics,
    spec: &SchemeSpec,
    h: f64,
    state: &ChainState,
    xi: &[f64],
    newton: &NewtonConfig,
) -> Result<StepOutput, SchemeError> {
    step_kernel(problem, spec, spec.a, h, state, xi, newton)
}

fn step_kernel(
    problem: &BrownianDynamics,
    spec: &SchemeSpec,
    a: f64,
    h: f64,
    state: &ChainState,
    xi: &[f64],
    newton: &NewtonConfig,
) -> Result<StepOutput, SchemeError> {
    assert!(h > 0.0, "step size must be positive");
    let d = problem.dim();
    debug_assert_eq!(state.x.len(), d);
    debug_assert_eq!(xi.len(), d);
    let theta = spec.theta;
    let noise = problem.sigma * h.sqrt();
    let shift = a * noise;

    // Postprocess the pre-step state with the same draw the kernel is
    // about to consume; xi is independent of X_n, which is all the
    // postprocessor needs.
    let (processed, post_factorizations) = postprocess_counted(problem, spec, h, state, xi, newton)?;

    let shifted: Vec<f64> = state.x.iter().zip(xi).map(|(x, z)| x + shift * z).collect();
    let fshift = problem.drift(&shifted);

    // Explicit part shared by all theta: X_n + h(1-theta) f(shifted) + noise.
    let base: Vec<f64> = (0..d)
        .map(|i| state.x[i] + h * (1.0 - theta) * fshift[i] + noise * xi[i])
        .collect();

    let (next_x, stage_factors, stats) = if theta == 0.0 {
        (base, None, StepStats::default())
    } else {
        // Solve G(Y) = Y - h theta f(Y) - const = 0 with
        // const = X_n + h(1-theta) f(shifted) + noise xi + shift xi,
        // so that X_{n+1} = Y - shift xi.
        let constant: Vec<f64> = (0..d).map(|i| base[i] + shift * xi[i]).collect();
        let mut guess: Vec<f64> = (0..d)
            .map(|i| state.x[i] + h * fshift[i] + noise * xi[i] + shift * xi[i])
            .collect();
        // The explicit predictor is hopeless when a stiff drift is
        // evaluated far off its slow manifold; start Newton from the
        // drift-free point instead so the stage iteration stays finite.
        let span = state.x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let wild = guess.iter().any(|v| !v.is_finite())
            || (0..d).any(|i| (h * fshift[i]).abs() > 10.0 * (1.0 + span));
        if wild {
            guess.copy_from_slice(&constant);
        }
        let mut fbuf = vec![0.0; d];
        let mut residual = |y: &[f64], out: &mut [f64]| {
            problem.drift_into(y, &mut fbuf);
            for i in 0..d {
                out[i] = y[i] - h * theta * fbuf[i] - constant[i];
            }
        };
        let mut jacobian = |y: &[f64], out: &mut [f64]| {
            problem.drift_jacobian_into(y, out);
            for i in 0..d {
                for j in 0..d {
                    let id = if i == j { 1.0 } else { 0.0 };
                    out[i * d + j] = id - h * theta * out[i * d + j];
                }
            }
        };
        // The stage equation is the gradient of this proximal merit.
        let mut merit = |y: &[f64]| {
            let mut q = 0.0;
            for i in 0..d {
                let e = y[i] - constant[i];
                q += e * e;
            }
            0.5 * q + h * theta * problem.potential.value(y)
        };
        let sol = solve_fixed_point(&mut residual, &mut jacobian, Some(&mut merit), &guess, newton)
            .map_err(|source| SchemeError::Newton {
                context: "implicit theta stage",
                source,
            })?;
        let next_x: Vec<f64> = (0..d).map(|i| sol.y[i] - shift * xi[i]).collect();
        let stats = StepStats {
            factorizations: sol.factorizations,
            newton_iterations: sol.iterations,
        };
        // The Newton matrix equals J_{n+1} only in the fully implicit case.
        let factors = if theta == 1.0 { Some(sol.factors) } else { None };
        (next_x, factors, stats)
    };

    Ok(StepOutput {
        next: ChainState {
            x: next_x,
            prev_xi: Some(xi.to_vec()),
            step: state.step + 1,
            stage_factors,
        },
        processed,
        xi_used: xi.to_vec(),
        stats: StepStats {
            factorizations: stats.factorizations + post_factorizations,
            newton_iterations: stats.newton_iterations,
        },
    })
}

/// The explicit chain equivalent to the noise-shifted Euler scheme with
/// trapezoidal postprocessing:
/// `Xbar_{n+1} = Xbar_n + h f(Xbar_n) + (sigma/2) sqrt(h) (xi_n + xi_{n+1})`.
pub fn step_nonmarkovian(
    problem: &BrownianDynamics,
    h: f64,
    state_bar: &[f64],
    xi_n: &[f64],
    xi_next: &[f64],
) -> Vec<f64> {
    assert!(h > 0.0, "step size must be positive");
    let half_noise = 0.5 * problem.sigma * h.sqrt();
    let f = problem.drift(state_bar);
    (0..problem.dim())
        .map(|i| state_bar[i] + h * f[i] + half_noise * (xi_n[i] + xi_next[i]))
        .collect()
}

// ══════════════════════════════════════════════════════════════════════
// Postprocessors
// ══════════════════════════════════════════════════════════════════════

/// Applies the configured postprocessor to the current state, producing
/// `Xbar_n` from `X_n` and a Gaussian draw independent of `X_n`.
pub fn postprocess(
    problem: &BrownianDynamics,
    spec: &SchemeSpec,
    h: f64,
    state: &ChainState,
    xi: &[f64],
    newton: &NewtonConfig,
) -> Result<Vec<f64>, SchemeError> {
    postprocess_counted(problem, spec, h, state, xi, newton).map(|(x, _)| x)
}

fn postprocess_counted(
    problem: &BrownianDynamics,
    spec: &SchemeSpec,
    h: f64,
    state: &ChainState,
    xi: &[f64],
    newton: &NewtonConfig,
) -> Result<(Vec<f64>, usize), SchemeError> {
    let d = problem.dim();
    let x = &state.x;
    let noise = problem.sigma * h.sqrt();
    match spec.post_kind {
        PostKind::None => Ok((x.clone(), 0)),
        PostKind::NoiseShift => {
            Ok(((0..d).map(|i| x[i] + 0.5 * noise * xi[i]).collect(), 0))
        }
        PostKind::StochasticPlain => {
            Ok(((0..d).map(|i| x[i] + spec.c * noise * xi[i]).collect(), 0))
        }
        PostKind::StochasticStabilized => {
            // For theta = 1 the kernel's Newton matrix is J_n itself, so
            // its LU factors are reused; otherwise factor J_n here.
            let reusable = spec.theta == 1.0;
            let (solved, factorizations) = match (&state.stage_factors, reusable) {
                (Some(factors), true) => (factors.solve(xi), 0),
                _ => {
                    let shifted: Vec<f64> = match &state.prev_xi {
                        Some(prev) => (0..d)
                            .map(|i| x[i] + spec.a * noise * prev[i])
                            .collect(),
                        None => x.clone(),
                    };
                    let mut jmat = vec![0.0; d * d];
                    problem.drift_jacobian_into(&shifted, &mut jmat);
                    for i in 0..d {
                        for j in 0..d {
                            let id = if i == j { 1.0 } else { 0.0 };
                            jmat[i * d + j] = id - h * jmat[i * d + j];
                        }
                    }
                    let factors = LuFactors::factor(d, &jmat).map_err(|source| {
                        SchemeError::Newton {
                            context: "stabilization matrix factorization",
                            source,
                        }
                    })?;
                    (factors.solve(xi), 1)
                }
            };
            let out = (0..d).map(|i| x[i] + spec.c * noise * solved[i]).collect();
            Ok((out, factorizations))
        }
        PostKind::DeterministicImplicit => {
            let bt = spec.b * spec.theta;
            let fx = problem.drift(x);
            let explicit: Vec<f64> = (0..d)
                .map(|i| x[i] + spec.b * h * (1.0 - spec.theta) * fx[i] + spec.c * noise * xi[i])
                .collect();
            if bt == 0.0 {
                return Ok((explicit, 0));
            }
            let guess: Vec<f64> = (0..d).map(|i| x[i] + spec.c * noise * xi[i]).collect();
            let mut fbuf = vec![0.0; d];
            let mut residual = |y: &[f64], out: &mut [f64]| {
                problem.drift_into(y, &mut fbuf);
                for i in 0..d {
                    out[i] = y[i] - bt * h * fbuf[i] - explicit[i];
                }
            };
            let mut jacobian = |y: &[f64], out: &mut [f64]| {
                problem.drift_jacobian_into(y, out);
                for i in 0..d {
                    for j in 0..d {
                        let id = if i == j { 1.0 } else { 0.0 };
                        out[i * d + j] = id - bt * h * out[i * d + j];
                    }
                }
            };
            // Proximal merit, valid as a descent certificate when the
            // implicit weight is positive.
            let mut merit = |y: &[f64]| {
                let mut q = 0.0;
                for i in 0..d {
                    let e = y[i] - explicit[i];
                    q += e * e;
                }
                0.5 * q + bt * h * problem.potential.value(y)
            };
            let merit_opt: Option<&mut dyn FnMut(&[f64]) -> f64> =
                if bt > 0.0 { Some(&mut merit) } else { None };
            let sol = solve_fixed_point(&mut residual, &mut jacobian, merit_opt, &guess, newton)
                .map_err(|source| SchemeError::Newton {
                    context: "implicit postprocessor",
                    source,
                })?;
            Ok((sol.y, sol.factorizations))
        }
    }
}

// ══════════════════════════════════════════════════════════════════════
// Presets
// ══════════════════════════════════════════════════════════════════════

/// Shift parameter of the fully implicit second-order family,
/// `a = -1/2 + sqrt(2)/2`.
pub const THETA1_A: f64 = -0.5 + SQRT_2 / 2.0;

/// Preset names accepted by [`preset`]; `theta_std(t)` takes a numeric
/// argument.
pub const PRESET_NAMES: [&str; 8] = [
    "euler",
    "theta_std(t)",
    "theta_half",
    "em_shift",
    "em_shift_det",
    "theta1_stab",
    "theta1_plain",
    "theta1_det",
];

/// Returns the published coefficient set for a named scheme.
pub fn preset(name: &str) -> Result<SchemeSpec, SchemeError> {
    let c_sto = (2.0 * SQRT_2 - 1.0).sqrt() / 2.0;
    let c_det = (4.0 * SQRT_2 - 1.0).sqrt() / 2.0;
    match name {
        "euler" => SchemeSpec::new(0.0, 0.0, 0.0, 0.0, PostKind::None, name),
        "theta_half" => SchemeSpec::new(0.5, 0.0, 0.0, 0.0, PostKind::None, name),
        "em_shift" => SchemeSpec::new(0.0, 0.5, 0.0, 0.5, PostKind::NoiseShift, name),
        "em_shift_det" => {
            SchemeSpec::new(0.0, 0.5, -0.25, 0.0, PostKind::DeterministicImplicit, name)
        }
        "theta1_stab" => {
            SchemeSpec::new(1.0, THETA1_A, 0.0, c_sto, PostKind::StochasticStabilized, name)
        }
        "theta1_plain" => {
            SchemeSpec::new(1.0, THETA1_A, 0.0, c_sto, PostKind::StochasticPlain, name)
        }
        "theta1_det" => {
            SchemeSpec::new(1.0, THETA1_A, SQRT_2 / 2.0, c_det, PostKind::DeterministicImplicit, name)
        }
        other => {
            if let Some(inner) = other
                .strip_prefix("theta_std(")
                .and_then(|s| s.strip_suffix(')'))
            {
                let theta: f64 = inner.trim().parse().map_err(|_| {
                    SchemeError::UnknownPreset(other.to_string())
                })?;
                return SchemeSpec::new(theta, 0.0, 0.0, 0.0, PostKind::None, other);
            }
            Err(SchemeError::UnknownPreset(other.to_string()))
        }
    }
}

// ══════════════════════════════════════════════════════════════════════
