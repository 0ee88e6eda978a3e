//! Exact asymptotic bias of IV and OLS estimators when selection into the
//! analyzed sample is caused by the treatment.
//!
//! Selecting on (or adjusting for) a variable that sits downstream of the
//! treatment opens collider paths between the instrument and unobserved
//! confounders, so even a perfectly valid instrument stops identifying
//! the causal effect. For linear path models with standardized jointly
//! Gaussian variables, those biases have exact closed forms. This crate
//! computes them three independent ways and cross-checks the results:
//!
//! - a covariance **matrix engine** ([`plim_matrix`]) that works for any
//!   acyclic model: build the implied covariance, apply the selection rule
//!   (condition on the score, or truncate the Gaussian along it), and take
//!   the population IV and OLS ratios;
//! - per-scenario **closed forms** ([`closed_form_baseline`] and friends)
//!   with path-labeled bias terms;
//! - a finite-sample **Monte Carlo oracle** ([`mc::simulate`],
//!   [`mc::estimate`]) with deterministic seeded parallelism and bootstrap
//!   standard errors.
//!
//! The central scalar is the variance-reduction factor psi in (0, 1]: the
//! factor by which truncating a Gaussian above a threshold shrinks
//! variance along the truncated direction ([`normal::psi`]). Covariate
//! adjustment is the psi = 1 limit, which is why adjusting for a
//! treatment-induced variable is never better than truncating on it, and
//! why IV beats OLS under truncation exactly when psi * gamma^2 <= 1/2
//! ([`preference_margin`]).
//!
//! # Start here
//!
//! Each major capability has a runnable example:
//!
//! ```text
//! cargo run --example analyze_baseline     # biases under each rule, one preset
//! cargo run --example closed_form_check    # closed forms vs matrix engine
//! cargo run --example custom_model         # analyze a user-defined JSON graph
//! cargo run --example truncated_moments    # truncated-Gaussian moment machinery
//! cargo run --example monte_carlo_verify   # simulate, estimate, compare to plims
//! cargo run --example region_map           # which estimator is least biased where
//! cargo run --example effect_bounds        # bracket the true effect from two plims
//! cargo run --example formula_audit        # quantify a known closed-form discrepancy
//! cargo run --example simulate_dataset     # write a synthetic sample as CSV
//! ```
//!
//! The same operations are scriptable through the `ivsel` binary
//! (`analyze`, `sweep`, `simulate`, `verify`, `presets`); see `ivsel
//! --help`.

pub mod cli;
pub mod covariance;
pub mod error;
pub mod estimands;
pub mod mc;
pub mod model;
pub mod normal;
pub mod sweep;
pub mod truncation;

pub use error::{Error, Result};
pub use estimands::{
    bounds_interval, closed_form, closed_form_baseline, closed_form_confounded_mediator,
    closed_form_mediator, closed_form_treatment_confounder, formula_audit, plim_matrix,
    preference_margin, BoundsInterval, Engine, EstimandReport, FormulaAudit, SelectionRule,
};
pub use model::{EdgeSpec, NodeRole, NodeSpec, PathModel, PresetParams, Scenario};
pub use truncation::{tallis_truncated_moments, TruncatedMoments, TruncationSpec};
