//! Core model and solvers for a paid-prioritization content market.
//!
//! A monopolistic ISP sells fast lanes to `M` content providers placed on a
//! Hotelling line; a continuum of users picks at most two providers (an
//! ordered primary/secondary bundle). The crate provides:
//!
//! - [`market`]: domain types, user utilities, bundle choice, assumption
//!   validation and regime classification;
//! - [`equilibrium`]: closed-form user masses and revenues for every solved
//!   regime (multi-purchasing, default, single-purchasing, all-dual,
//!   non-uniform user distribution) plus prioritization deltas;
//! - [`optimizer`]: the ISP's decision layer: cost models, optimal fast-lane
//!   delay, binding prices, affordability, joint programs, uniform menus and
//!   capacity reallocation;
//! - [`welfare`]: user welfare via closed form and numerical integration;
//! - [`oracle`]: a brute-force discretized-user simulator used to verify the
//!   closed forms.
//!
//! All operations are pure functions of immutable inputs and safe to call
//! concurrently.

pub mod distribution;
pub mod equilibrium;
pub mod market;
mod numeric;
pub mod optimizer;
pub mod oracle;
pub mod welfare;

pub use distribution::DistributionSpec;
pub use equilibrium::{CpMass, MassBreakdown};
pub use market::{
    AssumptionReport, Bundle, CandidateSet, CpProfile, DelayProfile, MarketError, MarketParams,
    Regime,
};
pub use optimizer::{CapacityPlan, CostModel, PrioritizationOffer};
pub use welfare::{WelfareMethod, WelfareReport};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, MarketError>;
