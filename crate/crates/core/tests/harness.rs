use meanfield_control::config::RunConfig;
use meanfield_control::dynamics::LinearizationTerm;
use meanfield_control::harness::{
    experiment_adjoint_consistency, experiment_convergence_rate, linearization_remainders, log_log_slope, write_csv, SuiteOptions,
};
use meanfield_control::Error;

fn sweep(sizes: Vec<usize>, reference: usize, steps: usize) -> RunConfig {
    let mut cfg = RunConfig::steering();
    cfg.experiments.sizes = sizes;
    cfg.experiments.reference_particles = reference;
    cfg.experiments.steps = Some(steps);
    cfg
}

#[test]
fn reference_size_row_has_no_gap() {
    let cfg = sweep(vec![8, 32], 32, 20);
    let report = experiment_adjoint_consistency(&cfg).unwrap();
    let last = report.rows[1];
    assert_eq!((last.particles, last.adjoint_gap, last.w2), (32, 0.0, 0.0));
    assert!(report.rows[0].adjoint_gap > 0.0);
}

#[test]
fn sizes_must_divide_the_reference() {
    let cfg = sweep(vec![12], 32, 10);
    assert!(matches!(experiment_adjoint_consistency(&cfg), Err(Error::Config(_))));
    assert!(matches!(experiment_convergence_rate(&cfg), Err(Error::Config(_))));
}

#[test]
fn reports_are_byte_reproducible() {
    let cfg = sweep(vec![8, 16], 64, 20);
    let bytes = || {
        let mut buf = Vec::new();
        write_csv(&experiment_adjoint_consistency(&cfg).unwrap().rows, &mut buf).unwrap();
        buf
    };
    let first = bytes();
    assert_eq!(first, bytes());
    assert!(String::from_utf8(first).unwrap().starts_with("particles,adjoint_gap,w2,ratio\n"));
}

#[test]
fn rate_at_the_reference_size_is_zero() {
    let cfg = sweep(vec![16, 64], 64, 20);
    let report = experiment_convergence_rate(&cfg).unwrap();
    assert!(report.complete);
    let last = report.rows[1];
    assert_eq!((last.control_gap_sq, last.w2_sq, last.ratio), (0.0, 0.0, 0.0));
    assert!(report.rows[0].control_gap_sq > 0.0);
}

#[test]
fn weaker_regularization_inflates_the_ratio_bound() {
    let strong = sweep(vec![8, 16, 32], 128, 20);
    let mut weak = strong.clone();
    weak.cost.regularization /= 2.0;
    let a = experiment_convergence_rate(&strong).unwrap();
    let b = experiment_convergence_rate(&weak).unwrap();
    assert!(a.complete && b.complete);
    assert!(b.ratio_bound > a.ratio_bound, "{} vs {}", b.ratio_bound, a.ratio_bound);
}

#[test]
fn every_sign_mutation_breaks_the_linearization_order() {
    let cfg = RunConfig { particles: 16, steps: 40, ..RunConfig::steering() };
    let deltas = [1e-1, 1e-2, 1e-3];
    let clean = linearization_remainders(&cfg, &SuiteOptions::default(), &deltas).unwrap();
    assert!((log_log_slope(&deltas, &clean) - 2.0).abs() <= 0.1);
    for term in [LinearizationTerm::Transport, LinearizationTerm::Interaction, LinearizationTerm::Control] {
        let options = SuiteOptions { mutation: Some(term), ..Default::default() };
        let rem = linearization_remainders(&cfg, &options, &deltas).unwrap();
        let slope = log_log_slope(&deltas, &rem);
        assert!((slope - 2.0).abs() > 0.1, "{term:?}: slope {slope}");
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let steering = RunConfig::from_path(&dir.join("steering.toml")).unwrap();
    assert_eq!(steering, RunConfig::steering());
    assert_eq!(RunConfig::from_path(&dir.join("default.toml")).unwrap(), RunConfig::steering());
    let quick = RunConfig::from_path(&dir.join("quick-sweep.toml")).unwrap();
    assert_eq!(quick.experiments.reference_particles, 256);
}
