//! Fisher-market computation library.
//!
//! Evaluates concave utility families, computes demand and Gale-demand
//! bundles with KKT certificates, maximizes Nash welfare through the
//! Eisenberg–Gale program, verifies competitive equilibria, runs the
//! generalized-flow demand transformations, and numerically checks
//! substitute-style structural properties on a catalog of worked examples.

pub mod demand;
pub mod equilibrium;
pub mod fixtures;
pub mod genflow;
pub mod lp;
pub mod model;
pub mod nsw;
pub mod property;
pub mod utility;

pub use model::{Allocation, Bundle, MarketInstance, PriceVector};
pub use utility::UtilitySpec;

use thiserror::Error as ThisError;

#[derive(Debug, Clone, ThisError)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("utility value is unbounded; the specification is invalid")]
    UnboundedUtility,
    #[error("demand is unbounded at these prices")]
    UnboundedDemand,
    #[error("prices lie outside the Gale price domain")]
    OutsidePriceDomain,
    #[error("utility is zero on every affordable bundle")]
    ZeroUtility,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("operation not defined for this family: {0}")]
    UnsupportedFamily(String),
    #[error("iteration cap exceeded: {0}")]
    IterationCap(String),
    #[error("transformation target is unbounded: {0}")]
    UnboundedTransform(String),
    #[error("agent cannot reach positive utility: {0}")]
    InfeasibleAgent(String),
    #[error("unknown fixture '{0}'")]
    UnknownFixture(String),
}
