//! Sparse-group-lasso regression for multivariate count data.
//!
//! Dirichlet-multinomial, multinomial, negative multinomial and generalized
//! Dirichlet-multinomial regressions are fit by majorization-minimization:
//! the penalty is majorized by a ridge term and the likelihood is minorized
//! column by column by weighted Poisson regressions, so every iteration is a
//! set of weighted ridge solves.

pub mod data;
pub mod engine;
pub mod error;
pub mod glm;
pub mod models;
pub mod par;
pub mod penalty;
pub mod ridge;
pub mod rng;
pub mod sim;
pub mod sums;
pub mod tuning;

pub use data::{CountDataset, CountMatrix, DesignMatrix};
pub use engine::{fit_count_sgl, FitControls, FitResult, WarmStart};
pub use error::{CountRegError, Result};
pub use models::{CoefficientMatrix, ModelKind};
pub use par::Execution;
pub use penalty::{EpsilonPolicy, GroupStructure, PenaltyConfig};
