//! Sequential predictors for nonlinear retarded systems with input and
//! output delays.
//!
//! A chain of `m` plant copies, each predicting the previous one a fraction
//! of the delay ahead, turns a delay-free stabilizing law into one that
//! tolerates arbitrarily long (known, constant) delays. This crate builds
//! such chains, integrates the closed loops with a fixed-step method of
//! steps and checks the trajectories.
//!
//! ```
//! use seqpred::scenarios::{builtin, run_scenario};
//!
//! let s = builtin("pendulum-sf-d2").unwrap().with_overrides(&["integrator.t_end=10"]).unwrap();
//! let outcome = run_scenario(&s).unwrap();
//! assert!(outcome.report.identity.unwrap().passed);
//! ```
//!
//! Module map:
//! - [`history`]: sampled signal storage with Hermite read-back
//! - [`dde`]: coupled delay systems and the RK4 integrator
//! - [`systems`]: plants, feedback laws and Lipschitz sampling
//! - [`predictor`]: state-feedback chains
//! - [`observer`]: output-feedback chains
//! - [`analysis`]: Halanay rates, KL bounds, GAS and ISS checks
//! - [`scenarios`]: TOML experiment definitions

pub mod analysis;
pub mod dde;
pub mod history;
pub mod observer;
pub mod predictor;
pub mod scenarios;
pub mod systems;

pub use dde::{integrate, CoupledSystem, IntegratorConfig, SimulationTrace};
pub use history::HistorySignal;
pub use predictor::min_chain_length;
pub use scenarios::{builtin, builtin_scenarios, run_scenario, Scenario};
pub use systems::{FeedbackLaw, RetardedPlant};

// The guide's snippets run as doc-tests so they cannot drift from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/delays-and-histories.md")]
    mod delays_and_histories {}
    #[doc = include_str!("../../../book/src/predictor-chains.md")]
    mod predictor_chains {}
    #[doc = include_str!("../../../book/src/output-feedback.md")]
    mod output_feedback {}
    #[doc = include_str!("../../../book/src/stability-checks.md")]
    mod stability_checks {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
