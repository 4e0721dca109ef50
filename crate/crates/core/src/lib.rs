//! Multi-site individualized treatment rules with a sign-coherent
//! cooperative penalty.

pub mod error;
pub mod estimator;
pub mod fedsim;
pub mod io;
pub mod loss;
pub mod model;
pub mod nuisance;
pub mod penalty;
pub mod registry;
pub mod sim;
pub mod solver;
pub mod tuning;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use loss::{LearnerKind, ResidualizedSite};
pub use model::{FitConfig, MultiSiteData, SiteDataset, StackedCoefficients, TreatmentRule};
pub use solver::PathFit;
