//! ADMM solver for the low-rank plus temporally smooth sparse decomposition
//! with optional per-mode graph regularization of the low-rank part.
//!
//! One iteration kernel covers all four model variants; the graph and
//! smoothness branches switch off when `theta` or `gamma` is zero.

mod admm;
mod config;
mod diagnostics;

pub use admm::{objective, solve, AdmmSolver, DecompositionResult, SolverState};
pub use config::{default_hyperparameters, SolverConfig, Variant};
pub use diagnostics::{Diagnostics, IterationRecord};
