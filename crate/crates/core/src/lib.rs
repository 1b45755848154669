//! Adaptive sample-size first-order methods for regularized empirical risk
//! minimization.
//!
//! A run solves a chain of regularized risks `R_n(w) = L_n(w) + (cV_n/2)‖w‖²`
//! on nested training prefixes of doubling size, each only to its statistical
//! accuracy `V_n = γ/n^α`, warm-starting every stage from the previous one.

pub mod bench;
pub mod data;
pub mod driver;
pub mod erm;
pub mod error;
pub mod schedule;
pub mod solvers;
pub mod verify;

pub use data::{Dataset, DatasetView, LabelMap, Sample};
pub use driver::{BudgetMode, RunConfig, RunOutput, StageReport};
pub use erm::{LossModel, RiskSpec, SmoothnessMode, Weights};
pub use error::{Error, Result};
pub use solvers::Method;
