use rayon::prelude::*;
use serde::Serialize;

use super::{nested_clouds, spearman, sweep_grid};
use crate::config::RunConfig;
use crate::error::Result;
use crate::model::ParticleEnsemble;
use crate::optimize::{optimize, ControlProblem, OptimizeResult, OptimizeStatus};
use crate::wasserstein::w2_to_reference;

/// Largest admissible ratio spread: the sweep's ratios must stay below this multiple of the
/// ratio at the smallest `N`.
pub const RATIO_SPREAD: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateRow {
    pub particles: usize,
    /// `||u^N - u^ref||^2_{L2}`.
    pub control_gap_sq: f64,
    /// `W2^2(mu_0^N, mu_0^ref)`.
    pub w2_sq: f64,
    pub ratio: f64,
    pub status: OptimizeStatus,
    pub iterations: usize,
    pub grad_norm: f64,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub reference_particles: usize,
    pub reference_status: OptimizeStatus,
    pub reference_grad_norm: f64,
    pub rows: Vec<RateRow>,
    /// Spearman correlation of the control gap against `N`.
    pub spearman: f64,
    /// Largest ratio over the sweep.
    pub ratio_bound: f64,
    /// `ratio_bound` within [`RATIO_SPREAD`] times the ratio at the smallest `N`.
    pub bounded: bool,
    /// Every optimization, the reference included, converged.
    pub complete: bool,
}

impl RateReport {
    pub fn passed(&self) -> bool {
        self.complete && self.bounded && self.spearman < 0.0
    }
}

/// Solves the control problem independently on nested clouds and compares each optimal
/// control with the one of the reference cloud.
pub fn experiment_convergence_rate(config: &RunConfig) -> Result<RateReport> {
    config.validate()?;
    let grid = sweep_grid(config)?;
    let start = config.initial_control(grid)?;
    let e = &config.experiments;
    let (reference, clouds) = nested_clouds(config, &e.sizes, e.reference_particles)?;
    let solve = |cloud: &ParticleEnsemble| -> Result<OptimizeResult> {
        let problem = ControlProblem { initial: cloud.clone(), kernels: config.kernels, cost: config.cost.clone() };
        optimize(&problem, &start, &config.optimizer)
    };
    let mut jobs: Vec<&ParticleEnsemble> = vec![&reference];
    jobs.extend(clouds.iter());
    let results: Vec<Result<(OptimizeResult, f64)>> = jobs
        .par_iter()
        .enumerate()
        .map(|(j, cloud)| {
            let run = solve(cloud)?;
            let w2 = if j == 0 { 0.0 } else { w2_to_reference(cloud.positions(), reference.positions(), config.dimension)? };
            Ok((run, w2))
        })
        .collect();
    let mut results = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter();
    let (ref_run, _) = results.next().expect("reference job");
    let u_ref = &ref_run.solution.control;
    let mut rows = Vec::with_capacity(clouds.len());
    for (cloud, (run, w2)) in clouds.iter().zip(results) {
        let gap = run.solution.control.l2_distance_sq(u_ref)?;
        let w2_sq = w2 * w2;
        rows.push(RateRow {
            particles: cloud.len(),
            control_gap_sq: gap,
            w2_sq,
            ratio: if w2_sq > 0.0 { gap / w2_sq } else { 0.0 },
            status: run.status,
            iterations: run.history.len() - 1,
            grad_norm: run.grad_norm(),
            cost: run.solution.cost,
        });
    }
    let ratio_bound = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let bounded = rows.first().is_some_and(|r| ratio_bound <= RATIO_SPREAD * r.ratio) && ratio_bound.is_finite();
    let complete = ref_run.status == OptimizeStatus::Converged && rows.iter().all(|r| r.status == OptimizeStatus::Converged);
    let ns: Vec<f64> = rows.iter().map(|r| r.particles as f64).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.control_gap_sq).collect();
    Ok(RateReport {
        reference_particles: reference.len(),
        reference_status: ref_run.status,
        reference_grad_norm: ref_run.grad_norm(),
        spearman: spearman(&ns, &gaps),
        rows,
        ratio_bound,
        bounded,
        complete,
    })
}
