use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::config::SolverConfig;
use super::diagnostics::{Diagnostics, IterationRecord};
use crate::error::{GlossError, Result};
use crate::graph::{laplacian_energy, ModeGraph};
use crate::prox::{
    mode_nuclear_norm, precompute_graph_inverse, precompute_tv_inverse, shrink, svt_mode,
    CachedInverse, DiffOperator,
};
use crate::scalar::Real;
use crate::tensor::{DenseTensor, SupportSet};

/// Primal, auxiliary and dual variables of the iteration.
///
/// Constraint groups and their multipliers:
/// `P_obs[L + S] = P_obs[Y]` (`fit_dual`), `Lx^n = L` (`nuclear_dual`),
/// `Laux^n = L` (`graph_dual`), `Z = W x_0 D` (`diff_dual`), `W = S` (`copy_dual`).
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState<T> {
    /// Low-rank part `L`.
    pub low_rank: DenseTensor<T>,
    /// Sparse part `S`.
    pub sparse: DenseTensor<T>,
    /// Copy `W` of the sparse part carrying the smoothness penalty.
    pub sparse_copy: DenseTensor<T>,
    /// Circular differences `Z` of `W` along the hour mode.
    pub sparse_diff: DenseTensor<T>,
    /// Per-mode copies `Lx^n` of `L` carrying the nuclear norms.
    pub nuclear_split: Vec<DenseTensor<T>>,
    /// Per-mode copies `Laux^n` of `L` carrying the graph penalties.
    pub graph_split: Vec<DenseTensor<T>>,
    pub fit_dual: DenseTensor<T>,
    pub nuclear_dual: Vec<DenseTensor<T>>,
    pub graph_dual: Vec<DenseTensor<T>>,
    pub diff_dual: DenseTensor<T>,
    pub copy_dual: DenseTensor<T>,
    pub iteration: usize,
}

impl<T: Real> SolverState<T> {
    /// All-zero state for a tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let z = DenseTensor::<T>::zeros(shape)?;
        let order = shape.len();
        Ok(Self {
            low_rank: z.clone(),
            sparse: z.clone(),
            sparse_copy: z.clone(),
            sparse_diff: z.clone(),
            nuclear_split: vec![z.clone(); order],
            graph_split: vec![z.clone(); order],
            fit_dual: z.clone(),
            nuclear_dual: vec![z.clone(); order],
            graph_dual: vec![z.clone(); order],
            diff_dual: z.clone(),
            copy_dual: z,
            iteration: 0,
        })
    }

    /// Largest absolute difference over every variable.
    pub fn max_abs_difference(&self, other: &Self) -> T {
        let pairs = [
            (&self.low_rank, &other.low_rank),
            (&self.sparse, &other.sparse),
            (&self.sparse_copy, &other.sparse_copy),
            (&self.sparse_diff, &other.sparse_diff),
            (&self.fit_dual, &other.fit_dual),
            (&self.diff_dual, &other.diff_dual),
            (&self.copy_dual, &other.copy_dual),
        ];
        let lists = [
            (&self.nuclear_split, &other.nuclear_split),
            (&self.graph_split, &other.graph_split),
            (&self.nuclear_dual, &other.nuclear_dual),
            (&self.graph_dual, &other.graph_dual),
        ];
        let diff = |a: &DenseTensor<T>, b: &DenseTensor<T>| {
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .fold(T::zero(), |acc, (&x, &y)| acc.max((x - y).abs()))
        };
        let mut m = T::zero();
        for (a, b) in pairs {
            m = m.max(diff(a, b));
        }
        for (xs, ys) in lists {
            for (a, b) in xs.iter().zip(ys) {
                m = m.max(diff(a, b));
            }
        }
        m
    }
}

/// Output of a decomposition run.
#[derive(Clone, Debug)]
pub struct DecompositionResult<T> {
    pub low_rank: DenseTensor<T>,
    pub sparse: DenseTensor<T>,
    pub diagnostics: Diagnostics,
}

/// Scalar hyperparameters converted to the working precision.
#[derive(Clone, Copy, Debug)]
struct Weights<T> {
    lambda: T,
    gamma: T,
    theta: T,
    beta: [T; 5],
}

/// Problem data, hyperparameters and cached inverses for one decomposition.
pub struct AdmmSolver<'a, T: Real> {
    config: SolverConfig,
    weights: Weights<T>,
    psi: Vec<T>,
    observed: DenseTensor<T>,
    observed_norm: T,
    omega: &'a SupportSet,
    graphs: Option<&'a [ModeGraph<T>]>,
    /// `beta_3 * (theta Phi^n + beta_3 I)^{-1}` per mode, when the graph term is on.
    graph_filters: Vec<DMatrix<T>>,
    diff: Option<DiffOperator<T>>,
    tv_inverse: Option<CachedInverse<T>>,
}

impl<'a, T: Real> AdmmSolver<'a, T> {
    pub fn new(
        y: &DenseTensor<T>,
        omega: &'a SupportSet,
        config: &SolverConfig,
        graphs: Option<&'a [ModeGraph<T>]>,
    ) -> Result<Self> {
        let order = y.order();
        config.validate(order)?;
        y.check_same_shape(omega.shape())?;
        if !y.is_finite() {
            return Err(GlossError::NonFinite("input tensor contains NaN or infinity".into()));
        }
        match (config.variant.uses_graphs(), graphs) {
            (true, None) => {
                return Err(GlossError::InvalidParameter(format!(
                    "{} needs one similarity graph per mode",
                    config.variant
                )))
            }
            (false, Some(_)) => {
                return Err(GlossError::InvalidParameter(format!(
                    "{} does not take similarity graphs",
                    config.variant
                )))
            }
            _ => {}
        }
        let beta = config.beta.map(T::lit);
        let weights = Weights {
            lambda: T::lit(config.lambda),
            gamma: T::lit(config.gamma),
            theta: T::lit(config.theta),
            beta,
        };
        let mut graph_filters = Vec::new();
        if let Some(gs) = graphs {
            if gs.len() != order {
                return Err(GlossError::DimensionMismatch(format!(
                    "expected {order} graphs, got {}",
                    gs.len()
                )));
            }
            for (n, g) in gs.iter().enumerate() {
                if g.mode != n || g.size() != y.shape()[n] {
                    return Err(GlossError::DimensionMismatch(format!(
                        "graph {n} has mode {} and {} nodes; mode {n} has extent {}",
                        g.mode,
                        g.size(),
                        y.shape()[n]
                    )));
                }
            }
            if weights.theta > T::zero() {
                for (n, g) in gs.iter().enumerate() {
                    let inv = precompute_graph_inverse(&g.laplacian, weights.theta, beta[2], n)?;
                    graph_filters.push(inv.matrix * beta[2]);
                }
            }
        }
        let (diff, tv_inverse) = if weights.gamma > T::zero() {
            let d = DiffOperator::new(y.shape()[0])?;
            let inv = precompute_tv_inverse(&d, beta[3], beta[4])?;
            (Some(d), Some(inv))
        } else {
            (None, None)
        };
        let observed = y.project(omega)?;
        let observed_norm = observed.frobenius_norm();
        Ok(Self {
            config: config.clone(),
            weights,
            psi: config.psi.iter().map(|&p| T::lit(p)).collect(),
            observed,
            observed_norm,
            omega,
            graphs,
            graph_filters,
            diff,
            tv_inverse,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn order(&self) -> usize {
        self.psi.len()
    }

    pub fn graph_active(&self) -> bool {
        !self.graph_filters.is_empty()
    }

    pub fn smoothness_active(&self) -> bool {
        self.diff.is_some()
    }

    pub fn initial_state(&self) -> Result<SolverState<T>> {
        SolverState::zeros(self.observed.shape())
    }

    /// Closed-form minimization over `L` of the fit, nuclear-split and graph-split penalties.
    pub fn update_low_rank(&self, state: &mut SolverState<T>) {
        let [b1, b2, b3, _, _] = self.weights.beta;
        let order = T::lit(self.order() as f64);
        let graph = self.graph_active();
        let y = self.observed.as_slice();
        let s = state.sparse.as_slice();
        let fit = state.fit_dual.as_slice();
        let mask = self.omega.as_slice();
        let (obs_div, miss_div) = if graph {
            (b1 + order * (b2 + b3), order * (b2 + b3))
        } else {
            (b1 + order * b2, order * b2)
        };
        let low_rank = state.low_rank.as_mut_slice();
        for i in 0..low_rank.len() {
            let mut t2 = T::zero();
            for n in 0..state.nuclear_split.len() {
                t2 += state.nuclear_split[n].as_slice()[i] - state.nuclear_dual[n].as_slice()[i];
            }
            let mut acc = b2 * t2;
            if graph {
                let mut t3 = T::zero();
                for n in 0..state.graph_split.len() {
                    t3 += state.graph_split[n].as_slice()[i] + state.graph_dual[n].as_slice()[i];
                }
                acc += b3 * t3;
            }
            low_rank[i] = if mask[i] {
                (b1 * (y[i] - s[i] + fit[i]) + acc) / obs_div
            } else {
                acc / miss_div
            };
        }
    }

    /// `Lx^n = fold(svt(unfold(L + Lambda_2^n, n), psi_n / beta_2))`.
    pub fn nuclear_split_candidate(&self, state: &SolverState<T>, n: usize) -> Result<DenseTensor<T>> {
        let target = state.low_rank.add(&state.nuclear_dual[n])?;
        svt_mode(&target, n, self.psi[n] / self.weights.beta[1])
    }

    pub fn update_nuclear_split(&self, state: &mut SolverState<T>, n: usize) -> Result<()> {
        state.nuclear_split[n] = self.nuclear_split_candidate(state, n)?;
        Ok(())
    }

    /// `Laux^n = fold(beta_3 G_inv unfold(L - Lambda_3^n, n))`; identity copy when the graph term is off.
    pub fn graph_split_candidate(&self, state: &SolverState<T>, n: usize) -> Result<DenseTensor<T>> {
        let target = state.low_rank.sub(&state.graph_dual[n])?;
        match self.graph_filters.get(n) {
            Some(filter) => target.mode_product(filter, n),
            None => Ok(target),
        }
    }

    pub fn update_graph_split(&self, state: &mut SolverState<T>, n: usize) -> Result<()> {
        if self.graph_active() {
            state.graph_split[n] = self.graph_split_candidate(state, n)?;
        }
        Ok(())
    }

    /// Soft thresholding of the blended fit/consensus target; observed and
    /// unobserved entries use different thresholds.
    pub fn update_sparse(&self, state: &mut SolverState<T>) {
        let [b1, _, _, _, b5] = self.weights.beta;
        let lambda = self.weights.lambda;
        let y = self.observed.as_slice();
        let mask = self.omega.as_slice();
        let l = state.low_rank.as_slice();
        let fit = state.fit_dual.as_slice();
        let w = state.sparse_copy.as_slice();
        let copy = state.copy_dual.as_slice();
        let s = state.sparse.as_mut_slice();
        if self.smoothness_active() {
            let obs_div = b1 + b5;
            let obs_thr = lambda / obs_div;
            let miss_thr = lambda / b5;
            for i in 0..s.len() {
                s[i] = if mask[i] {
                    let target = (b1 * (y[i] - l[i] + fit[i]) + b5 * (w[i] + copy[i])) / obs_div;
                    shrink(target, obs_thr)
                } else {
                    shrink(w[i] + copy[i], miss_thr)
                };
            }
        } else {
            let thr = lambda / b1;
            for i in 0..s.len() {
                s[i] = if mask[i] {
                    shrink(y[i] - l[i] + fit[i], thr)
                } else {
                    T::zero()
                };
            }
        }
    }

    /// Mode-0 solve `W = W_inv (beta_5 (S - Lambda_5) + beta_4 D^T (Lambda_4 + Z))`.
    pub fn update_sparse_copy(&self, state: &mut SolverState<T>) -> Result<()> {
        let (Some(diff), Some(inv)) = (&self.diff, &self.tv_inverse) else {
            return Ok(());
        };
        let [_, _, _, b4, b5] = self.weights.beta;
        let pulled = diff.apply_transpose(&state.diff_dual.add(&state.sparse_diff)?)?;
        let rhs = state
            .sparse
            .sub(&state.copy_dual)?
            .zip_map(&pulled, |a, b| b5 * a + b4 * b)?;
        state.sparse_copy = rhs.mode_product(&inv.matrix, 0)?;
        Ok(())
    }

    /// `Z = shrink(W x_0 D - Lambda_4, gamma / beta_4)`.
    pub fn update_sparse_diff(&self, state: &mut SolverState<T>) -> Result<()> {
        let Some(diff) = &self.diff else {
            return Ok(());
        };
        let thr = self.weights.gamma / self.weights.beta[3];
        let dw = diff.apply(&state.sparse_copy)?;
        state.sparse_diff = dw.zip_map(&state.diff_dual, |a, b| shrink(a - b, thr))?;
        Ok(())
    }

    /// Gradient-ascent steps on every multiplier.
    pub fn update_duals(&self, state: &mut SolverState<T>) -> Result<()> {
        {
            let y = self.observed.as_slice();
            let mask = self.omega.as_slice();
            let l = state.low_rank.as_slice();
            let s = state.sparse.as_slice();
            for (i, d) in state.fit_dual.as_mut_slice().iter_mut().enumerate() {
                if mask[i] {
                    *d -= l[i] + s[i] - y[i];
                }
            }
        }
        for n in 0..self.order() {
            let l = state.low_rank.as_slice();
            let lx = state.nuclear_split[n].as_slice();
            for (i, d) in state.nuclear_dual[n].as_mut_slice().iter_mut().enumerate() {
                *d -= lx[i] - l[i];
            }
            if self.graph_active() {
                let la = state.graph_split[n].as_slice();
                for (i, d) in state.graph_dual[n].as_mut_slice().iter_mut().enumerate() {
                    *d -= l[i] - la[i];
                }
            }
        }
        if let Some(diff) = &self.diff {
            let dw = diff.apply(&state.sparse_copy)?;
            let z = state.sparse_diff.as_slice();
            for (i, d) in state.diff_dual.as_mut_slice().iter_mut().enumerate() {
                *d -= dw.as_slice()[i] - z[i];
            }
            let s = state.sparse.as_slice();
            let w = state.sparse_copy.as_slice();
            for (i, d) in state.copy_dual.as_mut_slice().iter_mut().enumerate() {
                *d -= s[i] - w[i];
            }
        }
        Ok(())
    }

    /// One full iteration in the fixed order L, Lx, Laux, S, W, Z, duals.
    pub fn step(&self, state: &mut SolverState<T>) -> Result<()> {
        self.update_low_rank(state);
        let order = self.order();
        let nuclear = (0..order)
            .into_par_iter()
            .map(|n| self.nuclear_split_candidate(state, n))
            .collect::<Result<Vec<_>>>()?;
        state.nuclear_split = nuclear;
        if self.graph_active() {
            let graph = (0..order)
                .into_par_iter()
                .map(|n| self.graph_split_candidate(state, n))
                .collect::<Result<Vec<_>>>()?;
            state.graph_split = graph;
        }
        self.update_sparse(state);
        self.update_sparse_copy(state)?;
        self.update_sparse_diff(state)?;
        self.update_duals(state)?;
        state.iteration += 1;
        Ok(())
    }

    /// Objective value of `(L, S)` under this solver's weights and graphs.
    pub fn objective(&self, low_rank: &DenseTensor<T>, sparse: &DenseTensor<T>) -> Result<T> {
        objective(low_rank, sparse, &self.config, self.graphs)
    }

    fn relative_feasibility(&self, state: &SolverState<T>) -> f64 {
        let y = self.observed.as_slice();
        let mask = self.omega.as_slice();
        let l = state.low_rank.as_slice();
        let s = state.sparse.as_slice();
        let mut acc = 0.0f64;
        for i in 0..y.len() {
            if mask[i] {
                let r = (l[i] + s[i] - y[i]).as_f64();
                acc += r * r;
            }
        }
        let denom = self.observed_norm.as_f64();
        acc.sqrt() / if denom > 0.0 { denom } else { 1.0 }
    }

    fn record(&self, state: &SolverState<T>, previous_low_rank: &DenseTensor<T>, wall_ms: f64) -> Result<IterationRecord> {
        let l_norm = previous_low_rank.frobenius_norm().as_f64();
        let change = state.low_rank.distance(previous_low_rank)?.as_f64() / l_norm.max(1.0);
        let cur_norm = state.low_rank.frobenius_norm().as_f64().max(1.0);
        let mut nuclear_consensus = 0.0f64;
        for lx in &state.nuclear_split {
            nuclear_consensus = nuclear_consensus.max(lx.distance(&state.low_rank)?.as_f64() / cur_norm);
        }
        let sparse_consensus = if self.smoothness_active() {
            state.sparse.distance(&state.sparse_copy)?.as_f64()
                / state.sparse.frobenius_norm().as_f64().max(1.0)
        } else {
            0.0
        };
        let objective = if self.config.track_objective {
            Some(self.objective(&state.low_rank, &state.sparse)?.as_f64())
        } else {
            None
        };
        Ok(IterationRecord {
            iteration: state.iteration,
            feasibility: self.relative_feasibility(state),
            low_rank_change: change,
            nuclear_consensus,
            sparse_consensus,
            objective,
            wall_ms,
        })
    }

    /// Runs from the all-zero state until the stopping rule or the iteration cap.
    pub fn run(&self) -> Result<DecompositionResult<T>> {
        self.run_with(|_| {})
    }

    /// As [`AdmmSolver::run`], calling `observer` after every iteration.
    pub fn run_with(&self, mut observer: impl FnMut(&IterationRecord)) -> Result<DecompositionResult<T>> {
        let mut state = self.initial_state()?;
        let mut diagnostics = Diagnostics::default();
        let tol = self.config.tol;
        for _ in 0..self.config.max_iters {
            let previous = state.low_rank.clone();
            let start = Instant::now();
            let iteration = state.iteration + 1;
            self.step(&mut state).map_err(|e| match e {
                GlossError::NonFinite(what) => GlossError::SolverNonFinite { iteration, what },
                other => other,
            })?;
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            if !state.low_rank.is_finite() || !state.sparse.is_finite() {
                return Err(GlossError::SolverNonFinite {
                    iteration: state.iteration,
                    what: "low-rank or sparse iterate".into(),
                });
            }
            let rec = self.record(&state, &previous, wall_ms)?;
            observer(&rec);
            let done = rec.feasibility < tol && rec.low_rank_change < tol;
            diagnostics.records.push(rec);
            if done {
                diagnostics.converged = true;
                break;
            }
        }
        Ok(DecompositionResult {
            low_rank: state.low_rank,
            sparse: state.sparse,
            diagnostics,
        })
    }
}

/// Decomposes `y` observed on `omega` into low-rank and sparse parts.
pub fn solve<T: Real>(
    y: &DenseTensor<T>,
    omega: &SupportSet,
    config: &SolverConfig,
    graphs: Option<&[ModeGraph<T>]>,
) -> Result<DecompositionResult<T>> {
    AdmmSolver::new(y, omega, config, graphs)?.run()
}

/// `sum_n psi_n ||L_(n)||_* + theta sum_n tr(L_(n)^T Phi^n L_(n)) + lambda ||S||_1 + gamma ||S x_0 D||_1`.
pub fn objective<T: Real>(
    low_rank: &DenseTensor<T>,
    sparse: &DenseTensor<T>,
    config: &SolverConfig,
    graphs: Option<&[ModeGraph<T>]>,
) -> Result<T> {
    low_rank.check_same_shape(sparse.shape())?;
    if config.psi.len() != low_rank.order() {
        return Err(GlossError::DimensionMismatch(format!(
            "expected {} mode weights, got {}",
            low_rank.order(),
            config.psi.len()
        )));
    }
    let mut total = T::zero();
    for (n, &psi) in config.psi.iter().enumerate() {
        if psi != 0.0 {
            total += T::lit(psi) * mode_nuclear_norm(low_rank, n)?;
        }
    }
    if config.theta != 0.0 {
        if let Some(gs) = graphs {
            total += laplacian_energy(low_rank, gs, T::lit(config.theta))?;
        }
    }
    total += T::lit(config.lambda) * sparse.l1_norm();
    if config.gamma != 0.0 {
        let diff = DiffOperator::new(sparse.shape()[0])?;
        total += T::lit(config.gamma) * diff.apply(sparse)?.l1_norm();
    }
    Ok(total)
}
