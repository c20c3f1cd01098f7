//! Low-rank plus smooth-sparse decomposition of spatiotemporal count tensors
//! for urban anomaly detection.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod prox;
pub mod scalar;
pub mod scoring;
pub mod solver;
pub mod synth;
pub mod tensor;

pub use error::{GlossError, Result};
pub use eval::{roc_auc, run_trials, PipelineSpec, RocResult, TrialSummary};
pub use graph::{build_all_mode_graphs, build_mode_graph, BandwidthRule, ModeGraph};
pub use scalar::Real;
pub use scoring::{score_tensor, top_k_labels, ScoreMethod, ScoreTensor};
pub use solver::{default_hyperparameters, solve, AdmmSolver, DecompositionResult, SolverConfig, Variant};
pub use synth::{generate, SyntheticInstance, SyntheticSpec};
pub use tensor::{DenseTensor, LabelTensor, SupportSet};

pub type Tensor = DenseTensor<f64>;
pub type Tensor32 = DenseTensor<f32>;
pub type Graph = ModeGraph<f64>;
pub type Graph32 = ModeGraph<f32>;
pub type Scores = ScoreTensor<f64>;
pub type Scores32 = ScoreTensor<f32>;
