//! Multi-arm randomization with unequal allocation ratios.
//!
//! The crate covers the allocation procedures themselves (complete randomization,
//! stratified permuted blocks, weighted covariate-adaptive randomization), exact imbalance
//! bookkeeping over observed and unobserved covariates, closed-form variance and entropy
//! diagnostics, population models for simulation, and a seeded parallel Monte Carlo engine.

pub mod error;
pub mod ledger;
pub mod montecarlo;
pub mod procedures;
pub mod ratio;
pub mod scenarios;
pub mod schema;
pub mod theory;

pub use error::{Error, Result};
pub use ledger::{AllocationLedger, ObservedLedger, Scope};
pub use ratio::{AllocationRatios, Rational};
pub use schema::{BlindedProfile, Block, Covariate, CovariateSchema, Level, PatientProfile, StratumId};
