//! Scripted experiments: adjoint consistency across `N`, the convergence rate of optimal
//! controls, and the bundled gradient/stability verification suite.

mod consistency;
mod rate;
mod suite;

pub use consistency::{experiment_adjoint_consistency, ConsistencyReport, ConsistencyRow};
pub use rate::{experiment_convergence_rate, RateReport, RateRow};
pub use suite::{
    adjoint_bound_sweep, adjoint_gradient_errors, backward_picard_gap, dobrushin_worst, experiment_gradient_suite,
    linearization_remainders, scalar_adjoint_residuals, smooth_path, weak_form_residuals, CheckOutcome, SuiteOptions, SuiteReport,
};

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{ParticleEnsemble, TimeGrid};

/// Spearman rank correlation with average ranks for ties; `NaN` for fewer than two points
/// or a constant sample.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    if xs.len() != ys.len() || xs.len() < 2 {
        return f64::NAN;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// The time grid used by the sweeps.
pub(crate) fn sweep_grid(config: &RunConfig) -> Result<TimeGrid> {
    TimeGrid::new(config.horizon, config.experiments.steps.unwrap_or(config.steps))
}

/// Reference cloud of `reference` particles and its nested prefixes of the requested sizes.
pub(crate) fn nested_clouds(config: &RunConfig, sizes: &[usize], reference: usize) -> Result<(ParticleEnsemble, Vec<ParticleEnsemble>)> {
    let full = config.with_particles(reference).initial_ensemble()?;
    let mut out = Vec::with_capacity(sizes.len());
    for &n in sizes {
        if n > reference || !reference.is_multiple_of(n) {
            return Err(Error::config(format!("reference size {reference} is not a multiple of the sweep size {n}")));
        }
        out.push(full.prefix(n)?);
    }
    Ok((full, out))
}

/// Standard-normal-free perturbation coefficients in `[-1, 1]`.
pub(crate) fn coefficients(rng: &mut impl Rng, count: usize) -> Vec<f64> {
    (0..count).map(|_| rng.random_range(-1.0..1.0)).collect()
}
