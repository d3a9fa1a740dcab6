use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{coefficients, log_log_slope};
use crate::adjoint::{
    adjoint_solve_backward, adjoint_solve_picard_split, gradient_relation_residual, l2_adjoint_solve_1d,
    phase_space_diagnostics, uniform_adjoint_bound, TestFunction,
};
use crate::config::RunConfig;
use crate::costs::CostSpec;
use crate::dynamics::{dobrushin_gap, forward_solve, linearized_cost_derivative, linearized_solve_with, LinearizationTerm};
use crate::error::Result;
use crate::model::{sample_initial_ensemble, ControlPath, InitialMeasure, SamplingMode, TimeGrid};
use crate::optimize::ControlProblem;

const MODES: usize = 3;

/// `h(t) = amplitude * sum_m c_m sin(m pi t / T)` per control coordinate, sampled at the
/// nodes of `grid`; `coeffs` holds `MODES` values per coordinate and `h(0) = 0`.
pub fn smooth_path(grid: TimeGrid, agents: usize, dim: usize, coeffs: &[f64], amplitude: f64) -> Result<ControlPath> {
    let horizon = grid.horizon();
    let per = agents * dim;
    let mut values = Vec::with_capacity(grid.n_nodes() * per);
    for t in grid.nodes() {
        for c in 0..per {
            let s: f64 = (0..MODES)
                .map(|m| coeffs[c * MODES + m] * ((m + 1) as f64 * std::f64::consts::PI * t / horizon).sin())
                .sum();
            values.push(amplitude * s);
        }
    }
    ControlPath::from_values(grid, agents, dim, values)
}

/// Optional corruptions used to check that the suite detects them.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SuiteOptions {
    /// Reverses the sign of one term of the linearized dynamics.
    pub mutation: Option<LinearizationTerm>,
    /// Divides the number of time steps (2 doubles `dt`).
    pub coarsen: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn upper(name: &'static str, value: f64, threshold: f64, detail: String) -> Self {
        Self { name, passed: value <= threshold, value, threshold, detail }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<CheckOutcome>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Frozen instance shared by the checks: the configured cloud, kernels and cost on the sweep
/// grid, with `pairs` random smooth `(u, h)` directions.
struct Instance {
    problem: ControlProblem,
    base: ControlPath,
    steps: usize,
    pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Instance {
    fn new(config: &RunConfig, options: &SuiteOptions) -> Result<Self> {
        let coarsen = options.coarsen.max(1);
        let steps = (config.experiments.steps.unwrap_or(config.steps) / coarsen).max(4);
        let grid = TimeGrid::new(config.horizon, steps)?;
        let per = config.agents() * config.dimension * MODES;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_c0de);
        let pairs = (0..config.experiments.gradient_pairs.max(1))
            .map(|_| (coefficients(&mut rng, per), coefficients(&mut rng, per)))
            .collect();
        Ok(Self { problem: config.problem()?, base: config.initial_control(grid)?, steps, pairs })
    }

    /// The pair `(u, h)` with index `p` on a grid with `steps` steps.
    fn pair(&self, p: usize, steps: usize) -> Result<(ControlPath, ControlPath)> {
        let grid = TimeGrid::new(self.base.grid().horizon(), steps)?;
        let base = self.base.resample(grid)?;
        let (m, d) = (base.agents(), base.dim());
        let (cu, ch) = &self.pairs[p];
        let u = base.step(1.0, &smooth_path(grid, m, d, cu, 0.3)?)?;
        let h = smooth_path(grid, m, d, ch, 1.0)?;
        Ok((u, h))
    }
}

/// Fourth-order central difference of the reduced cost along `h`.
fn fd_derivative(problem: &ControlProblem, u: &ControlPath, h: &ControlPath, eps: f64) -> Result<f64> {
    let f = |s: f64| -> Result<f64> { problem.reduced_cost(&u.step(s, h)?) };
    Ok((8.0 * (f(eps)? - f(-eps)?) - (f(2.0 * eps)? - f(-2.0 * eps)?)) / (12.0 * eps))
}

fn relative(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale > 0.0 {
        (a - b).abs() / scale
    } else {
        0.0
    }
}

/// Adjoint `dJ[h]` against finite differences over all pairs, at the suite grid and two
/// coarser ones; returns the per-level worst relative errors, finest last.
pub fn adjoint_gradient_errors(config: &RunConfig, options: &SuiteOptions) -> Result<Vec<(usize, f64)>> {
    let inst = Instance::new(config, options)?;
    let eps = config.experiments.finite_difference_step;
    let levels = [inst.steps / 4, inst.steps / 2, inst.steps];
    let mut out = Vec::new();
    for &steps in &levels {
        let mut worst: f64 = 0.0;
        for p in 0..inst.pairs.len() {
            let (u, h) = inst.pair(p, steps)?;
            let eval = inst.problem.evaluate(&u)?;
            let adjoint = eval.gradient.directional(&h)?;
            let fd = fd_derivative(&inst.problem, &u, &h, eps)?;
            worst = worst.max(relative(adjoint, fd));
        }
        out.push((steps, worst));
    }
    Ok(out)
}

fn check_adjoint_gradient(config: &RunConfig, options: &SuiteOptions) -> Result<Vec<CheckOutcome>> {
    let errors = adjoint_gradient_errors(config, options)?;
    let pairs = config.experiments.gradient_pairs.max(1);
    let (steps, finest) = errors[errors.len() - 1];
    let ns: Vec<f64> = errors.iter().map(|e| e.0 as f64).collect();
    let es: Vec<f64> = errors.iter().map(|e| e.1.max(f64::MIN_POSITIVE)).collect();
    let order = -log_log_slope(&ns, &es);
    let levels = errors.iter().map(|(n, e)| format!("n={n}: {e:.2e}")).collect::<Vec<_>>().join(", ");
    Ok(vec![
        CheckOutcome::upper("adjoint-vs-fd", finest, 1e-4, format!("worst relative error at n={steps} over {pairs} pairs")),
        CheckOutcome { name: "adjoint-vs-fd-order", passed: order >= 2.0, value: order, threshold: 2.0, detail: levels },
    ])
}

/// Remainders `sup_t ||x(u + delta h) - x(u) - delta psi||` for `delta` in `deltas`, with the
/// rms norm over particles.
pub fn linearization_remainders(config: &RunConfig, options: &SuiteOptions, deltas: &[f64]) -> Result<Vec<f64>> {
    let inst = Instance::new(config, options)?;
    let (u, h) = inst.pair(0, inst.steps)?;
    let kernels = &inst.problem.kernels;
    let traj = forward_solve(&inst.problem.initial, &u, kernels)?;
    let psi = linearized_solve_with(&traj, &u, &h, kernels, options.mutation)?;
    let n = traj.particles() as f64;
    let mut out = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let moved = forward_solve(&inst.problem.initial, &u.step(delta, &h)?, kernels)?;
        let mut sup: f64 = 0.0;
        for k in 0..traj.grid().n_nodes() {
            let (a, b, p) = (moved.frame(k).positions(), traj.frame(k).positions(), psi.frame(k));
            let r: f64 = (0..a.len()).map(|j| (a[j] - b[j] - delta * p[j]).powi(2)).sum::<f64>() / n;
            sup = sup.max(r.sqrt());
        }
        out.push(sup);
    }
    Ok(out)
}

fn check_linearization(config: &RunConfig, options: &SuiteOptions) -> Result<Vec<CheckOutcome>> {
    let deltas = [1e-1, 1e-2, 1e-3];
    let rem = linearization_remainders(config, options, &deltas)?;
    let slope = log_log_slope(&deltas, &rem);
    let inst = Instance::new(config, options)?;
    let kernels = &inst.problem.kernels;
    let mut worst: f64 = 0.0;
    for p in 0..inst.pairs.len().min(5) {
        let (u, h) = inst.pair(p, inst.steps)?;
        let eval = inst.problem.evaluate(&u)?;
        let psi = linearized_solve_with(&eval.trajectory, &u, &h, kernels, options.mutation)?;
        let via_psi = linearized_cost_derivative(&eval.trajectory, &psi, &u, &h, &inst.problem.cost)?;
        worst = worst.max(relative(via_psi, eval.gradient.directional(&h)?));
    }
    Ok(vec![
        CheckOutcome {
            name: "linearization-remainder",
            passed: (slope - 2.0).abs() <= 0.1,
            value: slope,
            threshold: 0.1,
            detail: format!("log-log slope; remainders {}", rem.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>().join(", ")),
        },
        CheckOutcome::upper("psi-vs-adjoint", worst, 1e-4, "relative gap of the two directional derivatives".into()),
    ])
}

/// Sup-norm gap between the backward adjoint and the Picard fixed point on pair 0.
pub fn backward_picard_gap(config: &RunConfig, options: &SuiteOptions) -> Result<f64> {
    let inst = Instance::new(config, options)?;
    let (u, _) = inst.pair(0, inst.steps)?;
    let p = &inst.problem;
    let traj = forward_solve(&p.initial, &u, &p.kernels)?;
    let backward = adjoint_solve_backward(&traj, &u, &p.kernels, &p.cost)?;
    let e = &config.experiments;
    let picard = adjoint_solve_picard_split(&traj, &u, &p.kernels, &p.cost, e.picard_tolerance, e.picard_max_iterations)?;
    backward.sup_distance(&picard.adjoint)
}

/// One-dimensional instance derived from the configuration: first coordinates of the box,
/// controls and target.
fn line_instance(config: &RunConfig) -> (InitialMeasure, Vec<f64>, CostSpec) {
    let (lo, hi) = match &config.initial {
        InitialMeasure::UniformBox { lower, upper } => (lower[0], upper[0]),
        _ => (-0.5, 0.5),
    };
    let measure = InitialMeasure::UniformBox { lower: vec![lo], upper: vec![hi] };
    let cost = CostSpec { target: vec![config.cost.target[0]], ..config.cost.clone() };
    let u0 = config.controls.initial.iter().map(|c| c[0]).collect();
    (measure, u0, cost)
}

/// `(N, n, residual)` of the scalar-adjoint gradient relation over joint refinements.
pub fn scalar_adjoint_residuals(config: &RunConfig, levels: &[(usize, usize)]) -> Result<Vec<(usize, usize, f64)>> {
    let (measure, u0, cost) = line_instance(config);
    let mut out = Vec::new();
    for &(n_particles, steps) in levels {
        let u = ControlPath::constant(TimeGrid::new(config.horizon, steps)?, 1, &u0)?;
        let cloud = sample_initial_ensemble(&measure, n_particles, config.seed, SamplingMode::Midpoint)?;
        let traj = forward_solve(&cloud, &u, &config.kernels)?;
        let adj = adjoint_solve_backward(&traj, &u, &config.kernels, &cost)?;
        let q = l2_adjoint_solve_1d(&traj, &u, &config.kernels, &cost)?;
        out.push((n_particles, steps, gradient_relation_residual(&q, &adj)?));
    }
    Ok(out)
}

fn check_scalar_adjoint(config: &RunConfig, options: &SuiteOptions) -> Result<CheckOutcome> {
    let c = options.coarsen.max(1);
    let levels: Vec<(usize, usize)> = [(32, 25), (64, 50), (128, 100)].iter().map(|&(n, s)| (n, (s / c).max(4))).collect();
    let res = scalar_adjoint_residuals(config, &levels)?;
    let monotone = res.windows(2).all(|w| w[1].2 < w[0].2);
    let detail = res.iter().map(|(n, s, r)| format!("N={n},n={s}: {r:.2e}")).collect::<Vec<_>>().join(", ");
    Ok(CheckOutcome { name: "scalar-adjoint-trend", passed: monotone, value: res[res.len() - 1].2, threshold: res[0].2, detail })
}

/// Worst `W2^2 / bound` over all nodes after the first of `instances` random instance pairs.
pub fn dobrushin_worst(config: &RunConfig, options: &SuiteOptions, instances: usize) -> Result<(f64, bool)> {
    let inst = Instance::new(config, options)?;
    let p = &inst.problem;
    let mut worst: f64 = 0.0;
    let mut all = true;
    let per = config.agents() * config.dimension * MODES;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xd0b2);
    for i in 0..instances {
        let a = sample_initial_ensemble(&config.initial, config.particles, config.seed.wrapping_add(2 * i as u64 + 1), config.sampling)?;
        let b = sample_initial_ensemble(&config.initial, config.particles, config.seed.wrapping_add(2 * i as u64 + 2), config.sampling)?;
        let grid = *inst.base.grid();
        let (m, d) = (inst.base.agents(), inst.base.dim());
        let ua = inst.base.step(1.0, &smooth_path(grid, m, d, &coefficients(&mut rng, per), 0.3)?)?;
        let ub = inst.base.step(1.0, &smooth_path(grid, m, d, &coefficients(&mut rng, per), 0.3)?)?;
        let ta = forward_solve(&a, &ua, &p.kernels)?;
        let tb = forward_solve(&b, &ub, &p.kernels)?;
        let report = dobrushin_gap(&ta, &tb, &ua, &ub, &p.kernels)?;
        all &= report.all_satisfied();
        for r in report.rows.iter().skip(1) {
            if r.bound > 0.0 {
                worst = worst.max(r.w2_sq / r.bound);
            }
        }
    }
    Ok((worst, all))
}

/// `(N, sup_t (1/N) sum_i |xi_t^i|^2)` for each size, with the N-independent bound.
pub fn adjoint_bound_sweep(config: &RunConfig, options: &SuiteOptions, sizes: &[usize]) -> Result<(Vec<(usize, f64)>, f64)> {
    let inst = Instance::new(config, options)?;
    let p = &inst.problem;
    let u = &inst.base;
    let bound = uniform_adjoint_bound(&p.kernels, &p.cost, u.agents(), config.initial.support_radius(), config.horizon);
    let mut rows = Vec::new();
    for &n in sizes {
        let cloud = sample_initial_ensemble(&config.initial, n, config.seed, config.sampling)?;
        let traj = forward_solve(&cloud, u, &p.kernels)?;
        let adj = adjoint_solve_backward(&traj, u, &p.kernels, &p.cost)?;
        let sup = (0..traj.grid().n_nodes()).map(|k| adj.mean_square(k)).fold(0.0, f64::max);
        rows.push((n, sup));
    }
    Ok((rows, bound))
}

/// `(steps, max weak-form residual)` for pair 0 at the given step counts.
pub fn weak_form_residuals(config: &RunConfig, options: &SuiteOptions, levels: &[usize]) -> Result<Vec<(usize, f64)>> {
    let inst = Instance::new(config, options)?;
    let p = &inst.problem;
    let functions = TestFunction::polynomials(config.dimension);
    let mut out = Vec::new();
    for &steps in levels {
        let (u, _) = inst.pair(0, steps)?;
        let traj = forward_solve(&p.initial, &u, &p.kernels)?;
        let adj = adjoint_solve_backward(&traj, &u, &p.kernels, &p.cost)?;
        let report = phase_space_diagnostics(&traj, &adj, &u, &p.kernels, &p.cost, &functions)?;
        out.push((steps, report.max_residual));
    }
    Ok(out)
}

fn check_weak_form(config: &RunConfig, options: &SuiteOptions) -> Result<CheckOutcome> {
    let inst = Instance::new(config, options)?;
    let levels = [inst.steps / 4, inst.steps / 2, inst.steps];
    let res = weak_form_residuals(config, options, &levels)?;
    let ns: Vec<f64> = res.iter().map(|r| r.0 as f64).collect();
    let rs: Vec<f64> = res.iter().map(|r| r.1).collect();
    let slope = -log_log_slope(&ns, &rs);
    let detail = res.iter().map(|(n, r)| format!("n={n}: {r:.2e}")).collect::<Vec<_>>().join(", ");
    Ok(CheckOutcome { name: "weak-form-order", passed: (slope - 2.0).abs() <= 0.3, value: slope, threshold: 0.3, detail })
}

/// Runs every check on the configured instance.
pub fn experiment_gradient_suite(config: &RunConfig, options: &SuiteOptions) -> Result<SuiteReport> {
    config.validate()?;
    let mut checks = check_adjoint_gradient(config, options)?;
    checks.extend(check_linearization(config, options)?);
    let gap = backward_picard_gap(config, options)?;
    checks.push(CheckOutcome::upper("backward-vs-picard", gap, 1e-6, "sup-norm gap of the two adjoint solves".into()));
    checks.push(check_scalar_adjoint(config, options)?);
    let (worst, all) = dobrushin_worst(config, options, config.experiments.stability_instances)?;
    checks.push(CheckOutcome {
        name: "dobrushin",
        passed: all,
        value: worst,
        threshold: 1.0,
        detail: format!("worst W2^2/bound over {} instance pairs", config.experiments.stability_instances),
    });
    let sizes = [8, 16, 32, 64, 128, 256, 512];
    let (rows, bound) = adjoint_bound_sweep(config, options, &sizes)?;
    let worst = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    checks.push(CheckOutcome::upper("uniform-adjoint-bound", worst, bound, format!("N in {sizes:?}")));
    checks.push(check_weak_form(config, options)?);
    Ok(SuiteReport { checks })
}

