mod common;

use common::*;
use gloss::solver::SolverState;
use gloss::{
    build_all_mode_graphs, default_hyperparameters, AdmmSolver, BandwidthRule, DenseTensor, SolverConfig, SupportSet,
    Variant,
};

const RANK_ONE_SHAPE: [usize; 4] = [24, 7, 4, 6];

fn gloss_defaults_solve(y: &DenseTensor<f64>) -> gloss::DecompositionResult<f64> {
    let omega = SupportSet::full(y.shape()).unwrap();
    let config = default_hyperparameters(y, &omega, Variant::Gloss).unwrap();
    let graphs = build_all_mode_graphs(y, 10, BandwidthRule::default()).unwrap();
    AdmmSolver::new(y, &omega, &config, Some(&graphs)).unwrap().run().unwrap()
}

#[test]
fn zero_input_converges_immediately() {
    let shape = [5, 4, 3, 3];
    let y = DenseTensor::<f64>::zeros(&shape).unwrap();
    let omega = SupportSet::full(&shape).unwrap();
    let config = SolverConfig::new(Variant::Gloss, 4);
    let graphs = (0..4).map(|n| random_graph(&mut rng(n as u64), n, shape[n])).collect::<Vec<_>>();
    let out = AdmmSolver::new(&y, &omega, &config, Some(&graphs)).unwrap().run().unwrap();
    assert!(out.diagnostics.converged);
    assert!(out.diagnostics.iterations() <= 2);
    assert_eq!(out.low_rank.max_abs(), 0.0);
    assert_eq!(out.sparse.max_abs(), 0.0);
}

#[test]
fn zero_variance_input_has_no_defaults() {
    let y = DenseTensor::<f64>::filled(&[4, 3, 3, 3], 2.0).unwrap();
    let omega = SupportSet::full(y.shape()).unwrap();
    assert!(default_hyperparameters(&y, &omega, Variant::Gloss).is_err());
}

/// With the GLOSS sparsity weight `1 / nnz`, putting all of `Y` into `S` costs
/// only the mean absolute entry, far below any nonzero nuclear norm term, so
/// the rank-one tensor ends up in the sparse part.
#[test]
fn rank_one_under_gloss_defaults_goes_to_sparse_part() {
    let y = rank_one(&RANK_ONE_SHAPE);
    let out = gloss_defaults_solve(&y);
    let sparse_share = out.sparse.l1_norm() / y.l1_norm();
    let residual = y.sub(&out.low_rank).unwrap().frobenius_norm() / y.frobenius_norm();
    assert!(sparse_share > 0.99, "{sparse_share}");
    assert!(residual > 0.95, "{residual}");
    assert!(out.diagnostics.last().unwrap().feasibility < 1e-3);
}

#[test]
fn rank_one_is_recovered_with_a_sparsity_weight_that_favors_low_rank() {
    let y = rank_one(&RANK_ONE_SHAPE);
    let omega = SupportSet::full(y.shape()).unwrap();
    let mut config = default_hyperparameters(&y, &omega, Variant::Horpca).unwrap();
    config.max_iters = 500;
    let out = AdmmSolver::new(&y, &omega, &config, None).unwrap().run().unwrap();
    let sparse_share = out.sparse.l1_norm() / y.l1_norm();
    let residual = y.sub(&out.low_rank).unwrap().frobenius_norm() / y.frobenius_norm();
    assert!(sparse_share < 0.01, "{sparse_share}");
    assert!(residual < 0.05, "{residual}");
}

#[test]
fn spike_lands_in_sparse_part() {
    let mut y = rank_one(&RANK_ONE_SHAPE);
    let spike = 10.0 * y.max_abs();
    let positions: Vec<Vec<usize>> = (5..12).map(|h| vec![h, 3, 1, 2]).collect();
    for p in &positions {
        y.set(p, y.get(p) + spike);
    }
    let out = gloss_defaults_solve(&y);
    let magnitude = out.sparse.map(f64::abs);
    let top: Vec<usize> = gloss::scoring::ranking(&magnitude).into_iter().take(49).collect();
    let hits = positions.iter().filter(|p| top.contains(&y.offset(p))).count();
    assert!(hits as f64 >= 0.8 * positions.len() as f64, "{hits} of {}", positions.len());
}

fn random_problem(seed: u64, shape: &[usize]) -> (DenseTensor<f64>, SupportSet) {
    let mut r = rng(seed);
    let y = normal_tensor(&mut r, shape);
    (y, SupportSet::full(shape).unwrap())
}

fn iterate(solver: &AdmmSolver<f64>, steps: usize) -> SolverState<f64> {
    let mut st = solver.initial_state().unwrap();
    for _ in 0..steps {
        solver.step(&mut st).unwrap();
    }
    st
}

#[test]
fn variant_collapse() {
    let shape = [6, 5, 4, 3];
    let (y, omega) = random_problem(31, &shape);
    let mut r = rng(32);
    let graphs = (0..4).map(|n| random_graph(&mut r, n, shape[n])).collect::<Vec<_>>();
    let base = random_config(&mut r, Variant::Gloss, 4);

    let mut gloss_no_graph = base.clone();
    gloss_no_graph.theta = 0.0;
    let loss = SolverConfig { variant: Variant::Loss, ..gloss_no_graph.clone() };
    let a = iterate(&AdmmSolver::new(&y, &omega, &gloss_no_graph, Some(&graphs)).unwrap(), 20);
    let b = iterate(&AdmmSolver::new(&y, &omega, &loss, None).unwrap(), 20);
    assert!(a.max_abs_difference(&b) < 1e-10);

    let mut loss_no_tv = loss.clone();
    loss_no_tv.gamma = 0.0;
    let whorpca = SolverConfig { variant: Variant::Whorpca, ..loss_no_tv.clone() };
    let a = iterate(&AdmmSolver::new(&y, &omega, &loss_no_tv, None).unwrap(), 20);
    let b = iterate(&AdmmSolver::new(&y, &omega, &whorpca, None).unwrap(), 20);
    assert!(a.max_abs_difference(&b) < 1e-10);

    let mut whorpca_unit = whorpca.clone();
    whorpca_unit.psi = vec![1.0; 4];
    whorpca_unit.lambda = 1.0 / 6f64.sqrt();
    let horpca = SolverConfig { variant: Variant::Horpca, ..whorpca_unit.clone() };
    let a = iterate(&AdmmSolver::new(&y, &omega, &whorpca_unit, None).unwrap(), 20);
    let b = iterate(&AdmmSolver::new(&y, &omega, &horpca, None).unwrap(), 20);
    assert!(a.max_abs_difference(&b) < 1e-10);
}

#[test]
fn solve_is_deterministic() {
    let shape = [6, 5, 4, 3];
    let (y, omega) = random_problem(41, &shape);
    let graphs = build_all_mode_graphs(&y, 3, BandwidthRule::default()).unwrap();
    let mut config = SolverConfig::new(Variant::Gloss, 4);
    config.max_iters = 30;
    let a = gloss::solve(&y, &omega, &config, Some(&graphs)).unwrap();
    let b = gloss::solve(&y, &omega, &config, Some(&graphs)).unwrap();
    assert_eq!(a.low_rank.as_slice(), b.low_rank.as_slice());
    assert_eq!(a.sparse.as_slice(), b.sparse.as_slice());
}

fn converged_solve(seed: u64, variant: Variant) -> gloss::DecompositionResult<f64> {
    let shape = [6, 5, 4, 3];
    let (y, omega) = random_problem(seed, &shape);
    let mut config = default_hyperparameters(&y, &omega, variant).unwrap();
    config.max_iters = 5000;
    let graphs = build_all_mode_graphs(&y, 3, BandwidthRule::default()).unwrap();
    let graphs = variant.uses_graphs().then_some(graphs.as_slice());
    AdmmSolver::new(&y, &omega, &config, graphs).unwrap().run().unwrap()
}

#[test]
fn feasibility_and_consensus_at_convergence() {
    let runs = [(51, Variant::Gloss), (52, Variant::Loss), (53, Variant::Whorpca), (54, Variant::Horpca)];
    for (seed, variant) in runs {
        let out = converged_solve(seed, variant);
        if variant != Variant::Horpca {
            assert!(out.diagnostics.converged, "{variant}");
        }
        if !out.diagnostics.converged {
            continue;
        }
        let last = out.diagnostics.last().unwrap();
        assert!(last.feasibility <= 10.0 * SolverConfig::DEFAULT_TOL, "{variant}: {}", last.feasibility);
        assert!(last.nuclear_consensus <= 10.0 * SolverConfig::DEFAULT_TOL, "{variant}: {}", last.nuclear_consensus);
        assert!(last.sparse_consensus <= 10.0 * SolverConfig::DEFAULT_TOL, "{variant}: {}", last.sparse_consensus);
    }
}

#[test]
fn windowed_primal_residual_does_not_increase() {
    let out = converged_solve(61, Variant::Loss);
    let residual: Vec<f64> = out
        .diagnostics
        .records
        .iter()
        .map(|r| r.feasibility.max(r.nuclear_consensus).max(r.sparse_consensus))
        .collect();
    let windows: Vec<f64> = residual
        .chunks_exact(10)
        .map(|w| w.iter().cloned().fold(0.0, f64::max))
        .collect();
    assert!(windows.len() >= 2);
    for pair in windows.windows(2) {
        assert!(pair[1] <= pair[0], "{windows:?}");
    }
}

#[test]
fn diagnostics_length_matches_iterations() {
    let out = converged_solve(71, Variant::Whorpca);
    assert_eq!(out.diagnostics.records.len(), out.diagnostics.iterations());
    assert_eq!(out.low_rank.shape(), &[6, 5, 4, 3]);
}

#[test]
fn missing_graphs_are_rejected() {
    let (y, omega) = random_problem(81, &[4, 3, 3, 3]);
    let config = SolverConfig::new(Variant::Gloss, 4);
    assert!(AdmmSolver::new(&y, &omega, &config, None).is_err());
    let config = SolverConfig::new(Variant::Loss, 4);
    let graphs = build_all_mode_graphs(&y, 2, BandwidthRule::default()).unwrap();
    assert!(AdmmSolver::new(&y, &omega, &config, Some(&graphs)).is_err());
}

#[test]
fn single_precision_solve() {
    let y = rank_one(&[8, 5, 3, 4]).cast::<f32>();
    let omega = SupportSet::full(y.shape()).unwrap();
    let config = default_hyperparameters(&y, &omega, Variant::Loss).unwrap();
    let out = AdmmSolver::new(&y, &omega, &config, None).unwrap().run().unwrap();
    assert!(out.low_rank.is_finite() && out.sparse.is_finite());
    assert!(out.diagnostics.last().unwrap().feasibility < 1e-3);
}

#[test]
fn non_finite_iterate_reports_iteration() {
    let y = DenseTensor::from_fn(&[4, 3, 3, 3], |idx| if idx[0] == 0 { 1e300 } else { -1e300 * idx[1] as f64 }).unwrap();
    let omega = SupportSet::full(y.shape()).unwrap();
    let config = SolverConfig::new(Variant::Whorpca, 4);
    match AdmmSolver::new(&y, &omega, &config, None).unwrap().run() {
        Err(gloss::GlossError::SolverNonFinite { iteration, .. }) => assert!(iteration >= 1),
        other => panic!("expected a non-finite solver error, got {:?}", other.map(|r| r.diagnostics.iterations())),
    }
}
