//! blowup-lab: a desk-scale laboratory for a lattice reaction-diffusion
//! system whose solutions blow up in finite time, and for its small
//! additive-noise perturbations.
//!
//! The library covers:
//!
//! * the model itself — drift, energy, gradient structure ([`model`]);
//! * globally Lipschitz truncations and their invariant density
//!   ([`truncation`]);
//! * adaptive deterministic integration with blow-up extrapolation and
//!   Euler-Maruyama simulation with explosion bookkeeping ([`integrator`]);
//! * the phase portrait: basin classification, critical ray scalings, the
//!   auxiliary escape domain ([`phase`]);
//! * reproducible parallel Monte Carlo sweeps of explosion and exit times
//!   with the associated estimators ([`montecarlo`]).
//!
//! The companion mdbook under `book/` walks through the concepts; its code
//! snippets compile and run as doctests of this crate.

// validation uses negated comparisons so NaN parameters are rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod integrator;
pub mod model;
pub mod montecarlo;
pub mod phase;
pub mod rng;
pub mod truncation;

pub use error::{Error, Result};
pub use integrator::{
    blowup_extrapolate, hitting_time, integrate_deterministic, integrate_ou, integrate_sde,
    DetConfig, Outcome, PathRecord, SdeConfig,
};
pub use model::{reaction, DriftMode, EnergyReport, ModelParams, State};
pub use montecarlo::{
    bootstrap_interval, estimate_beta, estimate_beta_censored, fit_exponent, ks_exp1, run_sweep,
    summarize, ExperimentKind, SampleRow, SampleTable, SummaryStats, SweepSpec,
};
pub use phase::{
    build_domain_g, certificate_levels, classify, escape_experiment, explosion_certificate,
    lambda_crit, CertificateLevels, ClassKind, Classification, DomainG,
};
pub use rng::RandomStream;
pub use truncation::{
    g_n, lipschitz_bound, log_invariant_density, smoothstep, truncated_drift, truncated_energy,
    TruncationLevel,
};

/// The guide chapters double as doctests: every fenced Rust block in the
/// book is compiled and run by `cargo test --doc`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/lattice-model.md")]
    mod lattice_model {}
    #[doc = include_str!("../../../book/src/truncation.md")]
    mod truncation {}
    #[doc = include_str!("../../../book/src/deterministic-dynamics.md")]
    mod deterministic_dynamics {}
    #[doc = include_str!("../../../book/src/stochastic-explosions.md")]
    mod stochastic_explosions {}
    #[doc = include_str!("../../../book/src/metastability.md")]
    mod metastability {}
    #[doc = include_str!("../../../book/src/command-line.md")]
    mod command_line {}
}
