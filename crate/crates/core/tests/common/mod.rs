//! Independent objective oracles and random instances shared by the integration tests.
#![allow(dead_code)]

use gloss::graph::ModeGraph;
use gloss::solver::SolverState;
use gloss::{DenseTensor, SolverConfig, SupportSet, Variant};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const DIRECTIONS: usize = 20;
pub const STEP: f64 = 1e-4;
pub const SLACK: f64 = 1e-12;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor<f64> {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    DenseTensor::from_vec(shape, data).unwrap()
}

/// Shape bounded by 4x3x3x3.
pub fn small_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    vec![
        rng.gen_range(2..=4),
        rng.gen_range(2..=3),
        rng.gen_range(2..=3),
        rng.gen_range(2..=3),
    ]
}

pub fn random_mask(rng: &mut ChaCha8Rng, shape: &[usize], p_observed: f64) -> SupportSet {
    let mut mask = SupportSet::full(shape).unwrap();
    let len: usize = shape.iter().product();
    for i in 0..len {
        if !rng.gen_bool(p_observed) {
            mask.as_mut_slice()[i] = false;
        }
    }
    mask
}

/// Random symmetric nonnegative adjacency with zero diagonal.
pub fn random_graph(rng: &mut ChaCha8Rng, mode: usize, size: usize) -> ModeGraph<f64> {
    let mut w = DMatrix::zeros(size, size);
    for i in 0..size {
        for j in i + 1..size {
            if rng.gen_bool(0.7) {
                let v = rng.gen_range(0.05..1.5);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    ModeGraph::from_adjacency(mode, w, 1.0).unwrap()
}

pub fn random_config(rng: &mut ChaCha8Rng, variant: Variant, order: usize) -> SolverConfig {
    let mut c = SolverConfig::new(variant, order);
    c.lambda = rng.gen_range(0.05..1.0);
    c.gamma = if variant.uses_smoothness() { rng.gen_range(0.05..1.0) } else { 0.0 };
    c.theta = if variant.uses_graphs() { rng.gen_range(0.1..2.0) } else { 0.0 };
    c.psi = (0..order).map(|_| rng.gen_range(0.2..2.0)).collect();
    for b in c.beta.iter_mut() {
        *b = rng.gen_range(0.3..2.0);
    }
    c.with_variant_constraints()
}

pub fn random_state(rng: &mut ChaCha8Rng, shape: &[usize]) -> SolverState<f64> {
    let order = shape.len();
    let mut st = SolverState::zeros(shape).unwrap();
    st.low_rank = normal_tensor(rng, shape);
    st.sparse = normal_tensor(rng, shape);
    st.sparse_copy = normal_tensor(rng, shape);
    st.sparse_diff = normal_tensor(rng, shape);
    st.fit_dual = normal_tensor(rng, shape);
    st.diff_dual = normal_tensor(rng, shape);
    st.copy_dual = normal_tensor(rng, shape);
    for n in 0..order {
        st.nuclear_split[n] = normal_tensor(rng, shape);
        st.graph_split[n] = normal_tensor(rng, shape);
        st.nuclear_dual[n] = normal_tensor(rng, shape);
        st.graph_dual[n] = normal_tensor(rng, shape);
    }
    st
}

/// One random subproblem: data, mask, graphs, config and state.
pub struct Instance {
    pub y: DenseTensor<f64>,
    pub omega: SupportSet,
    pub graphs: Vec<ModeGraph<f64>>,
    pub config: SolverConfig,
    pub state: SolverState<f64>,
}

impl Instance {
    pub fn random(seed: u64, variant: Variant) -> Self {
        let mut r = rng(seed);
        let shape = small_shape(&mut r);
        let y = normal_tensor(&mut r, &shape);
        let omega = random_mask(&mut r, &shape, 0.75);
        let graphs = (0..shape.len()).map(|n| random_graph(&mut r, n, shape[n])).collect();
        let config = random_config(&mut r, variant, shape.len());
        let state = random_state(&mut r, &shape);
        Self {
            y,
            omega,
            graphs,
            config,
            state,
        }
    }

    pub fn graphs_for_solver(&self) -> Option<&[ModeGraph<f64>]> {
        self.config.variant.uses_graphs().then_some(self.graphs.as_slice())
    }
}

fn sq(x: f64) -> f64 {
    x * x
}

/// Mode-`n` unfolding built entry by entry.
pub fn unfold_by_index(t: &DenseTensor<f64>, n: usize) -> DMatrix<f64> {
    let shape = t.shape().to_vec();
    let cols = t.len() / shape[n];
    let mut m = DMatrix::zeros(shape[n], cols);
    let mut counters = vec![0usize; shape[n]];
    for off in 0..t.len() {
        let idx = t.index_of(off);
        let row = idx[n];
        m[(row, counters[row])] = t.as_slice()[off];
        counters[row] += 1;
    }
    m
}

pub fn nuclear_norm(t: &DenseTensor<f64>, n: usize) -> f64 {
    unfold_by_index(t, n).singular_values().iter().sum()
}

/// `tr(X_(n)^T Phi X_(n))` as `sum_ij Phi_ij <slice_i, slice_j>`.
pub fn laplacian_trace(t: &DenseTensor<f64>, g: &ModeGraph<f64>) -> f64 {
    let x = unfold_by_index(t, g.mode);
    let mut acc = 0.0;
    for i in 0..x.nrows() {
        for j in 0..x.nrows() {
            acc += g.laplacian[(i, j)] * x.row(i).dot(&x.row(j));
        }
    }
    acc
}

/// `||W x_0 D||_1` with `(D w)_i = w_i - w_{i+1}` circularly, fiber by fiber.
pub fn tv_norm(t: &DenseTensor<f64>) -> f64 {
    let i0 = t.shape()[0];
    let fibers = t.len() / i0;
    let x = t.as_slice();
    let mut acc = 0.0;
    for f in 0..fibers {
        for i in 0..i0 {
            acc += (x[f * i0 + i] - x[f * i0 + (i + 1) % i0]).abs();
        }
    }
    acc
}

/// `D` applied to every mode-0 fiber.
pub fn diff_mode0(t: &DenseTensor<f64>) -> DenseTensor<f64> {
    let i0 = t.shape()[0];
    let x = t.as_slice();
    let data = (0..t.len())
        .map(|off| {
            let (f, i) = (off / i0, off % i0);
            x[off] - x[f * i0 + (i + 1) % i0]
        })
        .collect();
    DenseTensor::from_vec(t.shape(), data).unwrap()
}

fn sum_sq_diff(a: &DenseTensor<f64>, b: &DenseTensor<f64>, c: &DenseTensor<f64>, sign_b: f64, sign_c: f64) -> f64 {
    (0..a.len())
        .map(|i| sq(a.as_slice()[i] + sign_b * b.as_slice()[i] + sign_c * c.as_slice()[i]))
        .sum()
}

pub fn graph_branch(inst: &Instance) -> bool {
    inst.config.variant.uses_graphs() && inst.config.theta > 0.0
}

pub fn tv_branch(inst: &Instance) -> bool {
    inst.config.gamma > 0.0
}

/// Update-1 objective in `L`.
pub fn low_rank_objective(inst: &Instance, l: &DenseTensor<f64>) -> f64 {
    let [b1, b2, b3, _, _] = inst.config.beta;
    let st = &inst.state;
    let mut fit = 0.0;
    for i in 0..l.len() {
        if inst.omega.as_slice()[i] {
            fit += sq(l.as_slice()[i] + st.sparse.as_slice()[i] - inst.y.as_slice()[i] - st.fit_dual.as_slice()[i]);
        }
    }
    let mut total = 0.5 * b1 * fit;
    for n in 0..l.order() {
        total += 0.5 * b2 * sum_sq_diff(&st.nuclear_split[n], l, &st.nuclear_dual[n], -1.0, -1.0);
        if graph_branch(inst) {
            total += 0.5 * b3 * sum_sq_diff(l, &st.graph_split[n], &st.graph_dual[n], -1.0, -1.0);
        }
    }
    total
}

/// Update-2 objective in `Lx^n`.
pub fn nuclear_split_objective(inst: &Instance, n: usize, x: &DenseTensor<f64>) -> f64 {
    let st = &inst.state;
    inst.config.psi[n] * nuclear_norm(x, n)
        + 0.5 * inst.config.beta[1] * sum_sq_diff(x, &st.low_rank, &st.nuclear_dual[n], -1.0, -1.0)
}

/// Update-3 objective in `Laux^n`, scaled so that its stationarity condition is
/// `theta Phi X + beta_3 (X - (L - Lambda_3)) = 0`.
pub fn graph_split_objective(inst: &Instance, n: usize, x: &DenseTensor<f64>) -> f64 {
    let st = &inst.state;
    0.5 * inst.config.theta * laplacian_trace(x, &inst.graphs[n])
        + 0.5 * inst.config.beta[2] * sum_sq_diff(&st.low_rank, x, &st.graph_dual[n], -1.0, -1.0)
}

/// Update-4 objective in `S`.
pub fn sparse_objective(inst: &Instance, s: &DenseTensor<f64>) -> f64 {
    let [b1, _, _, _, b5] = inst.config.beta;
    let st = &inst.state;
    let mut fit = 0.0;
    for i in 0..s.len() {
        if inst.omega.as_slice()[i] {
            fit += sq(s.as_slice()[i] + st.low_rank.as_slice()[i] - inst.y.as_slice()[i] - st.fit_dual.as_slice()[i]);
        }
    }
    let mut total = inst.config.lambda * s.l1_norm() + 0.5 * b1 * fit;
    if tv_branch(inst) {
        total += 0.5 * b5 * sum_sq_diff(s, &st.sparse_copy, &st.copy_dual, -1.0, -1.0);
    }
    total
}

/// Update-5 objective in `W`.
pub fn sparse_copy_objective(inst: &Instance, w: &DenseTensor<f64>) -> f64 {
    let [_, _, _, b4, b5] = inst.config.beta;
    let st = &inst.state;
    let dw = diff_mode0(w);
    0.5 * b4 * sum_sq_diff(&dw, &st.sparse_diff, &st.diff_dual, -1.0, -1.0)
        + 0.5 * b5 * sum_sq_diff(&st.sparse, w, &st.copy_dual, -1.0, -1.0)
}

/// Update-6 objective in `Z`.
pub fn sparse_diff_objective(inst: &Instance, z: &DenseTensor<f64>) -> f64 {
    let st = &inst.state;
    let dw = diff_mode0(&st.sparse_copy);
    inst.config.gamma * z.l1_norm() + 0.5 * inst.config.beta[3] * sum_sq_diff(&dw, z, &st.diff_dual, -1.0, -1.0)
}

/// Largest decrease of `f` over random `STEP`-sized perturbations of `x`; <= 0 at a minimizer.
pub fn worst_decrease(
    rng: &mut ChaCha8Rng,
    x: &DenseTensor<f64>,
    f: impl Fn(&DenseTensor<f64>) -> f64,
    restrict: Option<&[bool]>,
) -> f64 {
    let base = f(x);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..DIRECTIONS {
        let mut d = normal_tensor(rng, x.shape());
        if let Some(mask) = restrict {
            for (v, &keep) in d.as_mut_slice().iter_mut().zip(mask) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
        let norm = d.frobenius_norm();
        if norm == 0.0 {
            continue;
        }
        let mut p = x.clone();
        p.axpy(STEP / norm, &d).unwrap();
        worst = worst.max(base - f(&p));
    }
    worst
}

/// Deterministic rank-1 tensor from smooth positive factors.
pub fn rank_one(shape: &[usize]) -> DenseTensor<f64> {
    DenseTensor::from_fn(shape, |idx| {
        idx.iter()
            .enumerate()
            .map(|(n, &i)| {
                let t = i as f64 / shape[n] as f64;
                2.0 + (std::f64::consts::TAU * t + n as f64).sin()
            })
            .product()
    })
    .unwrap()
}

/// Closed-form updates checked by the perturbation suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    LowRank,
    NuclearSplit,
    GraphSplit,
    Sparse,
    SparseWithoutSmoothness,
    SparseCopy,
    SparseDiff,
}

impl Rule {
    pub const ALL: [Rule; 7] = [
        Rule::LowRank,
        Rule::NuclearSplit,
        Rule::GraphSplit,
        Rule::Sparse,
        Rule::SparseWithoutSmoothness,
        Rule::SparseCopy,
        Rule::SparseDiff,
    ];

    fn variant(self, seed: u64) -> Variant {
        match self {
            Rule::LowRank if seed % 2 == 1 => Variant::Loss,
            Rule::SparseWithoutSmoothness => Variant::Whorpca,
            _ => Variant::Gloss,
        }
    }
}

/// Worst objective decrease over all perturbations of the update output for one random instance.
pub fn rule_worst_decrease(rule: Rule, seed: u64) -> f64 {
    let inst = Instance::random(seed, rule.variant(seed));
    let solver = gloss::AdmmSolver::new(&inst.y, &inst.omega, &inst.config, inst.graphs_for_solver()).unwrap();
    let mut r = rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut st = inst.state.clone();
    match rule {
        Rule::LowRank => {
            solver.update_low_rank(&mut st);
            worst_decrease(&mut r, &st.low_rank, |x| low_rank_objective(&inst, x), None)
        }
        Rule::NuclearSplit => (0..inst.y.order())
            .map(|n| {
                let x = solver.nuclear_split_candidate(&st, n).unwrap();
                worst_decrease(&mut r, &x, |x| nuclear_split_objective(&inst, n, x), None)
            })
            .fold(f64::NEG_INFINITY, f64::max),
        Rule::GraphSplit => (0..inst.y.order())
            .map(|n| {
                let x = solver.graph_split_candidate(&st, n).unwrap();
                worst_decrease(&mut r, &x, |x| graph_split_objective(&inst, n, x), None)
            })
            .fold(f64::NEG_INFINITY, f64::max),
        Rule::Sparse | Rule::SparseWithoutSmoothness => {
            solver.update_sparse(&mut st);
            worst_decrease(&mut r, &st.sparse, |x| sparse_objective(&inst, x), None)
        }
        Rule::SparseCopy => {
            solver.update_sparse_copy(&mut st).unwrap();
            worst_decrease(&mut r, &st.sparse_copy, |x| sparse_copy_objective(&inst, x), None)
        }
        Rule::SparseDiff => {
            solver.update_sparse_diff(&mut st).unwrap();
            worst_decrease(&mut r, &st.sparse_diff, |x| sparse_diff_objective(&inst, x), None)
        }
    }
}
