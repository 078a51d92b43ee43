//! Postprocessed stochastic integrators for sampling the invariant measure
//! of Brownian dynamics, together with the analysis tooling used to design
//! and validate them: linear stability and accuracy functions, second-order
//! invariant-measure conditions, a weak-Taylor expansion oracle, and
//! deterministic quadrature references.
//!
//! The central objects are the theta-method kernels of [`schemes`] and the
//! cheap postprocessors that raise their accuracy for invariant-measure
//! averages by one order without touching the underlying chain.

pub mod ergodic;
pub mod linear_analysis;
pub mod model;
pub mod schemes;
pub mod newton;
pub mod order_conditions;
pub mod reference;
pub mod weak_taylor;
