//! Reference-value dispatch: picks the right ground-truth machinery for a
//! (problem, observable) pair and optionally caches the result in a
//! plain-text file.

use std::path::Path;

use anyhow::{bail, Context, Result};

use efforder::model::{BrownianDynamics, ProblemParams, SpringPotential};
use efforder::reference::{
    cache_lookup, cache_store, gaussian_reference, gibbs_reference, radial_quadrature,
    GaussianMoment, ReferenceMethod, ReferenceValue,
};
use efforder::weak_taylor::Observable;

/// Hessian of the quadratic potentials, for the Gaussian closed form.
fn quadratic_matrix(name: &str, params: &ProblemParams) -> Option<(usize, Vec<f64>)> {
    match name {
        "ou" => Some((1, vec![params.gamma])),
        "linear2d" => Some((2, vec![1.0, 0.25, 0.25, 1.0 / params.epsilon])),
        _ => None,
    }
}

fn method_tag(method: ReferenceMethod) -> &'static str {
    match method {
        ReferenceMethod::GaussianClosedForm => "gaussian",
        ReferenceMethod::TensorQuadrature => "tensor:1e-8",
        ReferenceMethod::RadialQuadrature => "radial:1e-10",
    }
}

pub fn method_name(method: ReferenceMethod) -> &'static str {
    match method {
        ReferenceMethod::GaussianClosedForm => "gaussian closed form",
        ReferenceMethod::TensorQuadrature => "tensor quadrature",
        ReferenceMethod::RadialQuadrature => "radial quadrature",
    }
}

fn cache_key(name: &str, params: &ProblemParams, sigma: f64, observable: &str, tag: &str) -> String {
    format!(
        "{name}:gamma={:.17e}:eps={:.17e}:dim={}:sigma={sigma:.17e}:{observable}:{tag}",
        params.gamma, params.epsilon, params.dim
    )
}

/// Computes the invariant-measure average of the observable, preferring
/// closed forms, then radial reduction, then tensor quadrature.
pub fn compute_reference(
    name: &str,
    params: &ProblemParams,
    problem: &BrownianDynamics,
    observable_name: &str,
    observable: &dyn Observable,
) -> Result<ReferenceValue> {
    let sigma = problem.sigma;
    if let Some((dim, matrix)) = quadratic_matrix(name, params) {
        let moment = match observable_name {
            "x2" if dim == 1 => Some(GaussianMoment::TotalSecondMoment),
            "sum_squares" => Some(GaussianMoment::TotalSecondMoment),
            _ => None,
        };
        if let Some(moment) = moment {
            return gaussian_reference(dim, &matrix, sigma, moment)
                .context("gaussian closed form");
        }
    }
    if name == "spring" {
        if observable_name != "radial_gap" {
            bail!(
                "spring references support only the radial observable radial_gap, \
                 got {observable_name}"
            );
        }
        return radial_quadrature(
            &SpringPotential::radial_value,
            &|r| (r - 1.0) * (r - 1.0),
            params.dim,
            sigma,
        )
        .context("radial quadrature");
    }
    let phi = |x: &[f64]| observable.value(x);
    gibbs_reference(problem, &phi).context("tensor quadrature")
}

/// As [`compute_reference`], consulting and updating a cache file.
#[allow(clippy::too_many_arguments)]
pub fn cached_reference(
    cache: Option<&Path>,
    name: &str,
    params: &ProblemParams,
    problem: &BrownianDynamics,
    observable_name: &str,
    observable: &dyn Observable,
) -> Result<ReferenceValue> {
    // The method that will be used is known before computing, so the
    // cache key can be formed for the lookup as well as the store.
    let tag = if quadratic_matrix(name, params).is_some()
        && matches!(observable_name, "x2" | "sum_squares")
    {
        method_tag(ReferenceMethod::GaussianClosedForm)
    } else if name == "spring" {
        method_tag(ReferenceMethod::RadialQuadrature)
    } else {
        method_tag(ReferenceMethod::TensorQuadrature)
    };
    let key = cache_key(name, params, problem.sigma, observable_name, tag);
    if let Some(path) = cache {
        if let Some((value, estimated_error)) = cache_lookup(path, &key) {
            let method = match tag {
                "gaussian" => ReferenceMethod::GaussianClosedForm,
                "radial:1e-10" => ReferenceMethod::RadialQuadrature,
                _ => ReferenceMethod::TensorQuadrature,
            };
            return Ok(ReferenceValue {
                value,
                method,
                estimated_error,
            });
        }
    }
    let reference = compute_reference(name, params, problem, observable_name, observable)?;
    if let Some(path) = cache {
        cache_store(path, &key, reference.value, reference.estimated_error)
            .context("updating reference cache")?;
    }
    Ok(reference)
}

// ══════════════════════════════════════════════════════════════════════

#[cfg(test)]
mod tests {
    use super::*;
    use efforder::model::{build_problem, DEFAULT_SIGMA};
    use efforder::weak_taylor::observables::build_observable;

    #[test]
    fn dispatch_picks_the_expected_method() {
        let params = ProblemParams::default();
        let cases = [
            ("ou", "x2", ReferenceMethod::GaussianClosedForm, 1.0),
            ("linear2d", "sum_squares", ReferenceMethod::GaussianClosedForm, 32.0 / 15.0),
            ("doublewell1d", "x2", ReferenceMethod::TensorQuadrature, f64::NAN),
        ];
        for (name, obs_name, method, expected) in cases {
            let problem = build_problem(name, &params, DEFAULT_SIGMA).unwrap();
            let observable = build_observable(obs_name, problem.dim()).unwrap();
            let reference =
                compute_reference(name, &params, &problem, obs_name, observable.as_ref()).unwrap();
            assert_eq!(reference.method, method, "{name}");
            if expected.is_finite() {
                assert!((reference.value - expected).abs() < 1e-10, "{name}");
            }
        }
        let params = ProblemParams {
            dim: 10,
            ..Default::default()
        };
        let problem = build_problem("spring", &params, DEFAULT_SIGMA).unwrap();
        let observable = build_observable("radial_gap", 10).unwrap();
        let reference =
            compute_reference("spring", &params, &problem, "radial_gap", observable.as_ref())
                .unwrap();
        assert_eq!(reference.method, ReferenceMethod::RadialQuadrature);
        assert!(reference.value > 0.0 && reference.value < 0.2);
    }

    #[test]
    fn cache_serves_the_stored_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("refcache.txt");
        let params = ProblemParams::default();
        let problem = build_problem("ou", &params, DEFAULT_SIGMA).unwrap();
        let observable = build_observable("x2", 1).unwrap();
        let first = cached_reference(
            Some(&path),
            "ou",
            &params,
            &problem,
            "x2",
            observable.as_ref(),
        )
        .unwrap();
        // Corrupting the cached value proves the second call reads it.
        let text = std::fs::read_to_string(&path).unwrap();
        let key = text.split_whitespace().next().unwrap().to_string();
        std::fs::write(&path, format!("{key} 7.5 0.0\n")).unwrap();
        let second = cached_reference(
            Some(&path),
            "ou",
            &params,
            &problem,
            "x2",
            observable.as_ref(),
        )
        .unwrap();
        // sigma = sqrt(2) squares to 2 + 1 ulp, so compare loosely.
        assert!((first.value - 1.0).abs() < 1e-14);
        assert_eq!(second.value, 7.5);
    }
}
