use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GlossError, Result};
use crate::scalar::Real;
use crate::tensor::{DenseTensor, SupportSet};

/// Model variant. Each one is the previous with one regularizer removed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    /// Weighted low rank + sparse + temporal smoothness + graph regularization.
    Gloss,
    /// Weighted low rank + sparse + temporal smoothness.
    Loss,
    /// Weighted low rank + sparse.
    Whorpca,
    /// Unweighted low rank + sparse.
    Horpca,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Gloss, Variant::Loss, Variant::Whorpca, Variant::Horpca];

    pub fn uses_graphs(self) -> bool {
        self == Variant::Gloss
    }

    pub fn uses_smoothness(self) -> bool {
        matches!(self, Variant::Gloss | Variant::Loss)
    }

    pub fn uses_weights(self) -> bool {
        self != Variant::Horpca
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gloss => "GLOSS",
            Variant::Loss => "LOSS",
            Variant::Whorpca => "WHORPCA",
            Variant::Horpca => "HORPCA",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = GlossError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "GLOSS" => Ok(Variant::Gloss),
            "LOSS" => Ok(Variant::Loss),
            "WHORPCA" => Ok(Variant::Whorpca),
            "HORPCA" => Ok(Variant::Horpca),
            other => Err(GlossError::InvalidParameter(format!("unknown variant `{other}`"))),
        }
    }
}

fn default_true() -> bool {
    true
}

/// Hyperparameters and stopping rule of one decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub variant: Variant,
    /// Sparsity weight.
    pub lambda: f64,
    /// Temporal smoothness (total variation) weight.
    pub gamma: f64,
    /// Graph regularization weight.
    pub theta: f64,
    /// Nuclear norm weight of every mode unfolding.
    pub psi: Vec<f64>,
    /// Penalty parameters of the five constraint groups.
    pub beta: [f64; 5],
    pub max_iters: usize,
    pub tol: f64,
    /// Evaluate the objective each iteration (costs one Gram eigendecomposition per mode).
    #[serde(default = "default_true")]
    pub track_objective: bool,
}

impl SolverConfig {
    pub const DEFAULT_MAX_ITERS: usize = 200;
    pub const DEFAULT_TOL: f64 = 1e-6;

    /// A configuration with unit weights for a tensor of the given order.
    pub fn new(variant: Variant, order: usize) -> Self {
        Self {
            variant,
            lambda: 1.0,
            gamma: if variant.uses_smoothness() { 1.0 } else { 0.0 },
            theta: if variant.uses_graphs() { 1.0 } else { 0.0 },
            psi: vec![1.0; order],
            beta: [1.0; 5],
            max_iters: Self::DEFAULT_MAX_ITERS,
            tol: Self::DEFAULT_TOL,
            track_objective: true,
        }
    }

    /// Applies the parameter restrictions implied by the variant.
    pub fn with_variant_constraints(mut self) -> Self {
        if !self.variant.uses_graphs() {
            self.theta = 0.0;
        }
        if !self.variant.uses_smoothness() {
            self.gamma = 0.0;
        }
        if !self.variant.uses_weights() {
            self.psi.iter_mut().for_each(|p| *p = 1.0);
        }
        self
    }

    pub fn validate(&self, order: usize) -> Result<()> {
        let bad = |msg: String| Err(GlossError::InvalidParameter(msg));
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.lambda) || !finite_nonneg(self.gamma) || !finite_nonneg(self.theta) {
            return bad(format!(
                "lambda, gamma and theta must be finite and nonnegative (got {}, {}, {})",
                self.lambda, self.gamma, self.theta
            ));
        }
        if self.psi.len() != order {
            return bad(format!("expected {order} mode weights, got {}", self.psi.len()));
        }
        if !self.psi.iter().all(|&p| finite_nonneg(p)) {
            return bad("mode weights must be finite and nonnegative".into());
        }
        if !self.beta.iter().all(|&b| b.is_finite() && b > 0.0) {
            return bad(format!("penalty parameters must be positive, got {:?}", self.beta));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive".into());
        }
        if !self.variant.uses_graphs() && self.theta != 0.0 {
            return bad(format!("{} has no graph term; theta must be 0", self.variant));
        }
        if !self.variant.uses_smoothness() && self.gamma != 0.0 {
            return bad(format!("{} has no smoothness term; gamma must be 0", self.variant));
        }
        if !self.variant.uses_weights() && self.psi.iter().any(|&p| p != 1.0) {
            return bad("HORPCA uses unit mode weights".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Trace of the square root of the row covariance of the mode-`n` unfolding.
fn sqrt_covariance_trace<T: Real>(t: &DenseTensor<T>, n: usize) -> Result<f64> {
    let mut x = t.unfold(n)?.map(|v| v.as_f64());
    let cols = x.ncols();
    for mut row in x.row_iter_mut() {
        let mean = row.sum() / cols as f64;
        row.add_scalar_mut(-mean);
    }
    let denom = cols.saturating_sub(1).max(1) as f64;
    let mut cov = DMatrix::<f64>::zeros(x.nrows(), x.nrows());
    cov.gemm(1.0 / denom, &x, &x.transpose(), 0.0);
    Ok(cov
        .symmetric_eigenvalues()
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum())
}

/// Data-driven defaults for the given variant.
///
/// * every penalty parameter is `1 / (5 std(vec(P_obs[Y])))`;
/// * sparsity weight: `1 / nnz(P_obs[Y])` for GLOSS, `1 / max_n I_n` for LOSS
///   and WHORPCA, `1 / sqrt(max_n I_n)` for HORPCA; smoothness weight equals
///   it where the variant has a smoothness term;
/// * mode weights are inversely proportional to `tr(sqrt(Cov_n))`, scaled so
///   the smallest is 1 (all 1 for HORPCA);
/// * graph weight is the geometric mean of the mode weights (GLOSS only).
pub fn default_hyperparameters<T: Real>(
    y: &DenseTensor<T>,
    omega: &SupportSet,
    variant: Variant,
) -> Result<SolverConfig> {
    let observed = y.project(omega)?;
    if omega.count_observed() == 0 {
        return Err(GlossError::EmptyInput("no observed entries".into()));
    }
    let len = observed.len() as f64;
    let mean = observed.as_slice().iter().map(|v| v.as_f64()).sum::<f64>() / len;
    let var = observed
        .as_slice()
        .iter()
        .map(|v| (v.as_f64() - mean).powi(2))
        .sum::<f64>()
        / len;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(GlossError::InvalidParameter(
            "observed data has zero variance; penalty parameters are undefined".into(),
        ));
    }
    let beta = 1.0 / (5.0 * std);
    let max_dim = *y.shape().iter().max().expect("nonempty shape") as f64;
    let lambda = match variant {
        Variant::Gloss => {
            let nnz = observed.count_nonzero();
            if nnz == 0 {
                return Err(GlossError::EmptyInput("observed data has no nonzero entries".into()));
            }
            1.0 / nnz as f64
        }
        Variant::Loss | Variant::Whorpca => 1.0 / max_dim,
        Variant::Horpca => 1.0 / max_dim.sqrt(),
    };
    let order = y.order();
    let psi = if variant.uses_weights() {
        let traces = (0..order)
            .map(|n| sqrt_covariance_trace(&observed, n))
            .collect::<Result<Vec<f64>>>()?;
        let top = traces.iter().cloned().fold(0.0, f64::max);
        if top > 0.0 {
            let floor = top * 1e-12;
            traces.iter().map(|&tr| top / tr.max(floor)).collect()
        } else {
            vec![1.0; order]
        }
    } else {
        vec![1.0; order]
    };
    let theta = if variant.uses_graphs() {
        (psi.iter().map(|p: &f64| p.ln()).sum::<f64>() / order as f64).exp()
    } else {
        0.0
    };
    Ok(SolverConfig {
        variant,
        lambda,
        gamma: if variant.uses_smoothness() { lambda } else { 0.0 },
        theta,
        psi,
        beta: [beta; 5],
        max_iters: SolverConfig::DEFAULT_MAX_ITERS,
        tol: SolverConfig::DEFAULT_TOL,
        track_objective: true,
    })
}
