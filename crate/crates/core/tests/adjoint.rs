use meanfield_control::adjoint::{
    adjoint_solve_backward, adjoint_solve_picard, adjoint_solve_picard_split, adjoint_solve_with_tracers, l2_adjoint_solve_1d,
    phase_space_diagnostics, TestFunction,
};
use meanfield_control::config::RunConfig;
use meanfield_control::costs::CostSpec;
use meanfield_control::dynamics::{forward_solve, forward_solve_with_tracers};
use meanfield_control::kernels::{KernelPair, KernelSpec};
use meanfield_control::model::{sample_initial_ensemble, ControlPath, InitialMeasure, SamplingMode, TimeGrid};
use meanfield_control::Error;

fn steering_solve(steps: usize) -> (RunConfig, meanfield_control::model::Trajectory, ControlPath) {
    let cfg = RunConfig::steering();
    let grid = TimeGrid::new(cfg.horizon, steps).unwrap();
    let u = cfg.initial_control(grid).unwrap();
    let traj = forward_solve(&cfg.initial_ensemble().unwrap(), &u, &cfg.kernels).unwrap();
    (cfg, traj, u)
}

fn silent(cost: &CostSpec) -> CostSpec {
    CostSpec { mean_weight: 0.0, variance_weight: 0.0, ..cost.clone() }
}

#[test]
fn zero_running_cost_gives_zero_adjoint() {
    let (cfg, traj, u) = steering_solve(20);
    let cost = silent(&cfg.cost);
    let xi = adjoint_solve_backward(&traj, &u, &cfg.kernels, &cost).unwrap();
    assert_eq!(xi.sup_norm(), 0.0);
    let picard = adjoint_solve_picard(&traj, &u, &cfg.kernels, &cost, 1e-12, 50).unwrap();
    assert_eq!(picard.iterations, 1);
    assert_eq!(picard.adjoint.sup_norm(), 0.0);
}

#[test]
fn stationary_particles_accumulate_the_source_linearly() {
    let cfg = RunConfig::steering();
    let kernels = KernelPair::new(KernelSpec::Zero, KernelSpec::Zero);
    let grid = TimeGrid::new(1.0, 16).unwrap();
    let u = cfg.initial_control(grid).unwrap();
    let cloud = cfg.initial_ensemble().unwrap();
    let traj = forward_solve(&cloud, &u, &kernels).unwrap();
    let xi = adjoint_solve_backward(&traj, &u, &kernels, &cfg.cost).unwrap();
    let delta = cfg.cost.delta_mu_j1(&cloud);
    for k in 0..grid.n_nodes() {
        let remaining = 1.0 - grid.node(k);
        for (a, b) in xi.frame(k).iter().zip(&delta) {
            assert!((a + remaining * b).abs() < 1e-13);
        }
    }
}

#[test]
fn picard_contracts_and_matches_the_backward_solve() {
    let (cfg, traj, u) = steering_solve(100);
    let backward = adjoint_solve_backward(&traj, &u, &cfg.kernels, &cfg.cost).unwrap();
    let picard = adjoint_solve_picard(&traj, &u, &cfg.kernels, &cfg.cost, 1e-12, 100).unwrap();
    assert!(picard.changes.windows(2).all(|w| w[1] < w[0]), "{:?}", picard.changes);
    assert!(backward.sup_distance(&picard.adjoint).unwrap() <= 1e-6);
}

#[test]
fn picard_splits_when_the_full_horizon_stalls() {
    let (cfg, traj, u) = steering_solve(64);
    let err = adjoint_solve_picard(&traj, &u, &cfg.kernels, &cfg.cost, 1e-12, 10).unwrap_err();
    assert!(matches!(err, Error::NotConverged { iterations: 10, .. }));
    let split = adjoint_solve_picard_split(&traj, &u, &cfg.kernels, &cfg.cost, 1e-12, 10).unwrap();
    assert!(split.segments > 1);
    let backward = adjoint_solve_backward(&traj, &u, &cfg.kernels, &cfg.cost).unwrap();
    assert!(backward.sup_distance(&split.adjoint).unwrap() <= 1e-6);
}

#[test]
fn tracers_on_the_reference_cloud_reproduce_its_adjoint() {
    let (cfg, traj, u) = steering_solve(20);
    let cloud = traj.initial().clone();
    let joint = forward_solve_with_tracers(&cloud, &cloud, &u, &cfg.kernels).unwrap();
    let joint_adj = adjoint_solve_with_tracers(&joint, cloud.len(), &u, &cfg.kernels, &cfg.cost).unwrap();
    let own = adjoint_solve_backward(&traj, &u, &cfg.kernels, &cfg.cost).unwrap();
    let len = cloud.len() * cloud.dim();
    for k in 0..traj.grid().n_nodes() {
        assert_eq!(&joint_adj.frame(k)[len..], own.frame(k));
        assert_eq!(&joint.frame(k).positions()[len..], traj.frame(k).positions());
    }
}

fn line_instance(n: usize, steps: usize) -> (meanfield_control::model::Trajectory, ControlPath, KernelPair, CostSpec) {
    let kernels = KernelPair::new(KernelSpec::gaussian(-0.5, 1.0), KernelSpec::gaussian(0.5, 0.5));
    let measure = InitialMeasure::UniformBox { lower: vec![-0.5], upper: vec![0.5] };
    let cloud = sample_initial_ensemble(&measure, n, 1, SamplingMode::Midpoint).unwrap();
    let u = ControlPath::constant(TimeGrid::new(1.0, steps).unwrap(), 1, &[-1.0]).unwrap();
    let traj = forward_solve(&cloud, &u, &kernels).unwrap();
    let cost = CostSpec { target: vec![0.5], mean_weight: 1.0, variance_weight: 1.0, regularization: 5.0 };
    (traj, u, kernels, cost)
}

#[test]
fn scalar_adjoint_is_linear_in_the_cost_weights() {
    let (traj, u, kernels, cost) = line_instance(32, 20);
    let q = l2_adjoint_solve_1d(&traj, &u, &kernels, &cost).unwrap();
    let doubled = CostSpec { mean_weight: 2.0, variance_weight: 2.0, ..cost.clone() };
    let q2 = l2_adjoint_solve_1d(&traj, &u, &kernels, &doubled).unwrap();
    for (a, b) in q.values.iter().flatten().zip(q2.values.iter().flatten()) {
        assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
    let zero = l2_adjoint_solve_1d(&traj, &u, &kernels, &silent(&cost)).unwrap();
    assert!(zero.values.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn scalar_adjoint_needs_one_dimension() {
    let (cfg, traj, u) = steering_solve(10);
    let err = l2_adjoint_solve_1d(&traj, &u, &cfg.kernels, &cfg.cost).unwrap_err();
    assert!(matches!(err, Error::Unsupported(_)));
}

#[test]
fn constant_test_function_has_no_residual() {
    let (cfg, traj, u) = steering_solve(40);
    let xi = adjoint_solve_backward(&traj, &u, &cfg.kernels, &cfg.cost).unwrap();
    let report = phase_space_diagnostics(&traj, &xi, &u, &cfg.kernels, &cfg.cost, &[TestFunction::Constant]).unwrap();
    assert!(report.rows.iter().all(|r| r.lhs == 0.0 && r.rhs == 0.0));
    assert_eq!(report.terminal_momentum, 0.0);
    assert!(report.moment_gap < 1e-14);
}

#[test]
fn momentum_moment_without_sources_stays_at_integrator_order() {
    let cfg = RunConfig::steering();
    let kernels = KernelPair::new(cfg.kernels.interaction, KernelSpec::Zero);
    let cost = silent(&cfg.cost);
    let grid = TimeGrid::new(1.0, 40).unwrap();
    let u = cfg.initial_control(grid).unwrap();
    let traj = forward_solve(&cfg.initial_ensemble().unwrap(), &u, &kernels).unwrap();
    let xi = adjoint_solve_backward(&traj, &u, &kernels, &cost).unwrap();
    let report = phase_space_diagnostics(&traj, &xi, &u, &kernels, &cost, &[TestFunction::Momentum(0), TestFunction::Momentum(1)]).unwrap();
    assert!(report.max_residual < 1e-12);
}
