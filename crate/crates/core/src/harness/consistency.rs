use serde::Serialize;

use super::{nested_clouds, spearman, sweep_grid};
use crate::adjoint::{adjoint_solve_backward, adjoint_solve_with_tracers};
use crate::config::RunConfig;
use crate::dynamics::{forward_solve, forward_solve_with_tracers};
use crate::error::Result;
use crate::model::ParticleEnsemble;
use crate::wasserstein::w2_to_reference;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConsistencyRow {
    pub particles: usize,
    /// `max_t (1/N) sum_i |xi_t^{N,i} - xi_t(x_t^{N,i})|`, the reference adjoint evaluated
    /// along tracer characteristics started at the `N`-cloud.
    pub adjoint_gap: f64,
    /// `W2(mu_0^N, mu_0^ref)`.
    pub w2: f64,
    /// `adjoint_gap / w2` (0 when both vanish).
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    pub reference_particles: usize,
    pub rows: Vec<ConsistencyRow>,
    /// Smallest `C` with `gap <= C W2` over the sweep.
    pub fitted_constant: f64,
    /// Spearman correlation of the gap against `N`.
    pub spearman: f64,
}

/// With the configured constant control, compares the adjoint of each `N`-system with the
/// adjoint of the reference system sampled along the `N`-cloud's own characteristics.
pub fn experiment_adjoint_consistency(config: &RunConfig) -> Result<ConsistencyReport> {
    config.validate()?;
    let grid = sweep_grid(config)?;
    let u = config.initial_control(grid)?;
    let e = &config.experiments;
    let (reference, clouds) = nested_clouds(config, &e.sizes, e.reference_particles)?;
    let d = config.dimension;

    let mut all = Vec::new();
    for c in &clouds {
        all.extend_from_slice(c.positions());
    }
    let tracers = ParticleEnsemble::new(d, all)?;
    let joint = forward_solve_with_tracers(&reference, &tracers, &u, &config.kernels)?;
    let joint_adj = adjoint_solve_with_tracers(&joint, reference.len(), &u, &config.kernels, &config.cost)?;

    let mut rows = Vec::with_capacity(clouds.len());
    let mut offset = reference.len() * d;
    for cloud in &clouds {
        let n = cloud.len();
        let traj = forward_solve(cloud, &u, &config.kernels)?;
        let adj = adjoint_solve_backward(&traj, &u, &config.kernels, &config.cost)?;
        let mut gap: f64 = 0.0;
        for k in 0..grid.n_nodes() {
            let tracer = &joint_adj.frame(k)[offset..offset + n * d];
            let own = adj.frame(k);
            let y: f64 = (0..n)
                .map(|i| {
                    (0..d).map(|a| (own[i * d + a] - tracer[i * d + a]).powi(2)).sum::<f64>().sqrt()
                })
                .sum::<f64>()
                / n as f64;
            gap = gap.max(y);
        }
        offset += n * d;
        let w2 = w2_to_reference(cloud.positions(), reference.positions(), d)?;
        let ratio = if w2 > 0.0 { gap / w2 } else { 0.0 };
        rows.push(ConsistencyRow { particles: n, adjoint_gap: gap, w2, ratio });
    }
    let fitted_constant = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let ns: Vec<f64> = rows.iter().map(|r| r.particles as f64).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.adjoint_gap).collect();
    Ok(ConsistencyReport { reference_particles: reference.len(), rows, fitted_constant, spearman: spearman(&ns, &gaps) })
}
