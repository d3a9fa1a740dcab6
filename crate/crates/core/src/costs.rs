//! Cylindrical running cost `J1(mu) = j(<g_1, mu>, ..., <g_L, mu>)`, the control cost
//! `J2(u) = (lambda / 2) int |u'|^2`, and the measure derivative `delta_mu J1`.
//!
//! The observables are the `d` coordinate projections followed by the squared norm, and
//! `j` tracks the centre of mass and the variance:
//! `j(y1, y2) = (l1 / 2) |y1 - x_des|^2 + (l2 / 4) (y2 - |y1|^2)^2`,
//! where `y2 - |y1|^2` is the total variance of the cloud.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ControlPath, ParticleEnsemble, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observable {
    Coordinate(usize),
    SquaredNorm,
}

impl Observable {
    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Observable::Coordinate(a) => x[a],
            Observable::SquaredNorm => x.iter().map(|v| v * v).sum(),
        }
    }

    /// `out += scale * grad g(x)`.
    pub fn grad_acc(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        match *self {
            Observable::Coordinate(a) => out[a] += scale,
            Observable::SquaredNorm => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o += 2.0 * scale * xi;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    /// Desired centre of mass `x_des`.
    pub target: Vec<f64>,
    /// `lambda_1`, weight of the centre-of-mass term.
    pub mean_weight: f64,
    /// `lambda_2`, weight of the variance term.
    pub variance_weight: f64,
    /// `lambda`, weight of the control regularisation `J2`.
    pub regularization: f64,
}

impl CostSpec {
    pub fn dim(&self) -> usize {
        self.target.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.target.is_empty() || self.target.iter().any(|t| !t.is_finite()) {
            return Err(Error::config("cost target must be a finite, non-empty vector"));
        }
        if !(self.regularization.is_finite() && self.regularization > 0.0) {
            return Err(Error::config(format!("regularization must be positive, got {}", self.regularization)));
        }
        if !(self.mean_weight.is_finite() && self.variance_weight.is_finite()) {
            return Err(Error::config("cost weights must be finite"));
        }
        Ok(())
    }

    /// True when `j` vanishes identically.
    pub fn running_is_zero(&self) -> bool {
        self.mean_weight == 0.0 && self.variance_weight == 0.0
    }

    pub fn observables(&self) -> Vec<Observable> {
        (0..self.dim()).map(Observable::Coordinate).chain(std::iter::once(Observable::SquaredNorm)).collect()
    }

    /// `(<g_1, mu>, ..., <g_L, mu>)` for the empirical measure.
    pub fn moments(&self, ensemble: &ParticleEnsemble) -> Vec<f64> {
        moments_of(self.dim(), ensemble.positions())
    }

    pub fn outer(&self, y: &[f64]) -> f64 {
        let d = self.dim();
        let (mean, y2) = (&y[..d], y[d]);
        let dist2: f64 = mean.iter().zip(&self.target).map(|(m, t)| (m - t).powi(2)).sum();
        let var = y2 - mean.iter().map(|m| m * m).sum::<f64>();
        0.5 * self.mean_weight * dist2 + 0.25 * self.variance_weight * var * var
    }

    pub fn outer_grad(&self, y: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let (mean, y2) = (&y[..d], y[d]);
        let var = y2 - mean.iter().map(|m| m * m).sum::<f64>();
        let mut g: Vec<f64> = mean
            .iter()
            .zip(&self.target)
            .map(|(m, t)| self.mean_weight * (m - t) - self.variance_weight * var * m)
            .collect();
        g.push(0.5 * self.variance_weight * var);
        g
    }

    /// `J1(mu^N)`.
    pub fn running_cost(&self, ensemble: &ParticleEnsemble) -> f64 {
        self.outer(&self.moments(ensemble))
    }

    pub fn moments_raw(&self, positions: &[f64]) -> Vec<f64> {
        moments_of(self.dim(), positions)
    }

    /// `J1` for raw positions (`N * d` coordinates).
    pub fn running_cost_raw(&self, positions: &[f64]) -> f64 {
        self.outer(&moments_of(self.dim(), positions))
    }

    /// `delta_mu J1(mu^N)(x^i)` at every particle, flattened `N * d`.
    pub fn delta_mu_j1(&self, ensemble: &ParticleEnsemble) -> Vec<f64> {
        self.delta_mu_j1_raw(ensemble.positions())
    }

    pub(crate) fn delta_mu_j1_raw(&self, positions: &[f64]) -> Vec<f64> {
        self.delta_mu_j1_at(positions, positions)
    }

    /// `delta_mu J1(mu)(y)` at arbitrary `targets`, with `mu` given by `positions`.
    pub fn delta_mu_j1_at(&self, positions: &[f64], targets: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; targets.len()];
        if self.running_is_zero() {
            return out;
        }
        let dj = self.outer_grad(&moments_of(d, positions));
        let obs = self.observables();
        for (x, o) in targets.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            for (g, &w) in obs.iter().zip(&dj) {
                g.grad_acc(x, w, o);
            }
        }
        out
    }

    /// `sum_l (d_l j)(<g, mu>) g_l(x^i)` at every particle: the source of the scalar adjoint.
    pub fn first_variation_raw(&self, positions: &[f64]) -> Vec<f64> {
        let d = self.dim();
        if self.running_is_zero() {
            return vec![0.0; positions.len() / d];
        }
        let dj = self.outer_grad(&moments_of(d, positions));
        let obs = self.observables();
        positions.chunks_exact(d).map(|x| obs.iter().zip(&dj).map(|(g, w)| w * g.value(x)).sum()).collect()
    }

    /// `J2(u) = (lambda / 2) sum_l int |du^l/dt|^2`, exact for piecewise-linear paths.
    pub fn control_cost(&self, u: &ControlPath) -> f64 {
        0.5 * self.regularization * u.h1_seminorm_sq()
    }

    /// `dJ2(u)[h] = lambda sum_k dt u'_k . h'_k`.
    pub fn control_cost_derivative(&self, u: &ControlPath, h: &ControlPath) -> Result<f64> {
        Ok(self.regularization * u.h1_inner(h)?)
    }

    /// `C_g` in `|grad g_l(x)| <= C_g (1 + |x|)` for the builtin observables.
    pub fn growth_constant(&self) -> f64 {
        2.0
    }

    /// `sup_{|p| <= radius} |Dj(p)|`.
    pub fn outer_grad_bound(&self, radius: f64) -> f64 {
        let t = self.target.iter().map(|v| v * v).sum::<f64>().sqrt();
        let var = radius + radius * radius;
        let a = self.mean_weight.abs() * (radius + t) + self.variance_weight.abs() * var * radius;
        let b = 0.5 * self.variance_weight.abs() * var;
        (a * a + b * b).sqrt()
    }

    /// `C_j` with `|J1(mu) - J1(nu)| <= C_j W2(mu, nu)`, assembled from moment bounds.
    pub fn lipschitz_constant(&self, mu: &ParticleEnsemble, nu: &ParticleEnsemble) -> f64 {
        let (pm, pn) = (self.moments(mu), self.moments(nu));
        let m1 = pm.iter().zip(&pn).map(|(a, b)| a.abs() + b.abs()).fold(0.0, f64::max);
        let m2 = mu.second_moment() + nu.second_moment();
        let l = pm.len() as f64;
        l * self.growth_constant() * (1.0 + 2.0 * m2.sqrt()) * self.outer_grad_bound(l * m1)
    }

    /// `sup |delta_mu J1(mu)(x)|` over `|x| <= radius` and measures supported in that ball.
    pub fn delta_sup_bound(&self, radius: f64) -> f64 {
        let t = self.target.iter().map(|v| v * v).sum::<f64>().sqrt();
        // delta_mu J1(x) = l1 (y1 - x_des) + l2 Var (x - y1), with Var <= radius^2.
        self.mean_weight.abs() * (radius + t) + 2.0 * self.variance_weight.abs() * radius.powi(3)
    }
}

fn moments_of(d: usize, positions: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; d + 1];
    for x in positions.chunks_exact(d) {
        for a in 0..d {
            y[a] += x[a];
        }
        y[d] += x.iter().map(|v| v * v).sum::<f64>();
    }
    let n = (positions.len() / d) as f64;
    y.iter_mut().for_each(|v| *v /= n);
    y
}

/// `d/dt J1(mu_t) = (1/N) sum_i delta_mu J1(x^i) . v_i` at a stored node.
fn running_cost_rate(cost: &CostSpec, ensemble: &ParticleEnsemble, velocity: &[f64]) -> f64 {
    let delta = cost.delta_mu_j1(ensemble);
    delta.iter().zip(velocity).map(|(a, b)| a * b).sum::<f64>() / ensemble.len() as f64
}

/// `int_0^T J1(mu_t) dt` by the trapezoidal rule with its `dt^2` endpoint correction
/// (the derivative of `J1` along the flow is exact at the stored nodes).
pub fn running_cost_integral(traj: &Trajectory, cost: &CostSpec) -> f64 {
    let grid = traj.grid();
    let n = grid.n_steps();
    let dt = grid.dt();
    let vals: Vec<f64> = traj.frames().iter().map(|f| cost.running_cost(f)).collect();
    let trap = dt * (0.5 * (vals[0] + vals[n]) + vals[1..n].iter().sum::<f64>());
    let rate0 = running_cost_rate(cost, traj.frame(0), traj.velocity(0));
    let rate_t = running_cost_rate(cost, traj.frame(n), traj.velocity(n));
    trap - dt * dt / 12.0 * (rate_t - rate0)
}

/// Plain trapezoidal rule for `int_0^T J1(mu_t) dt`.
pub fn running_cost_trapezoid(traj: &Trajectory, cost: &CostSpec) -> f64 {
    let n = traj.grid().n_steps();
    let vals: Vec<f64> = traj.frames().iter().map(|f| cost.running_cost(f)).collect();
    traj.grid().dt() * (0.5 * (vals[0] + vals[n]) + vals[1..n].iter().sum::<f64>())
}

/// `J(mu, u) = int_0^T J1(mu_t) dt + J2(u)`.
pub fn total_cost(traj: &Trajectory, u: &ControlPath, cost: &CostSpec) -> Result<f64> {
    if traj.grid() != u.grid() || traj.dim() != u.dim() || cost.dim() != traj.dim() {
        return Err(Error::shape("trajectory, control path and cost disagree on grid or dimension"));
    }
    Ok(running_cost_integral(traj, cost) + cost.control_cost(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_initial_ensemble, InitialMeasure, SamplingMode, TimeGrid};
    use crate::wasserstein::w2_assignment;

    fn spec(l1: f64, l2: f64) -> CostSpec {
        CostSpec { target: vec![0.5, -0.25], mean_weight: l1, variance_weight: l2, regularization: 2.0 }
    }

    #[test]
    fn perfect_tracking_costs_nothing() {
        let c = spec(1.0, 0.0);
        let e = ParticleEnsemble::new(2, vec![0.5, -0.25, 0.5, -0.25]).unwrap();
        assert_eq!(c.running_cost(&e), 0.0);
        // all particles at the target also has zero variance
        assert_eq!(spec(1.0, 3.0).running_cost(&e), 0.0);
    }

    #[test]
    fn moments_by_hand() {
        let c = CostSpec { target: vec![0.0], mean_weight: 1.0, variance_weight: 1.0, regularization: 1.0 };
        let e = ParticleEnsemble::new(1, vec![0.0, 2.0]).unwrap();
        assert_eq!(c.moments(&e), vec![1.0, 2.0]);
        // j = 1/2 * 1 + 1/4 * (2 - 1)^2
        assert!((c.running_cost(&e) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn zero_outer_function_has_zero_derivative() {
        let e = ParticleEnsemble::new(2, vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        assert!(spec(0.0, 0.0).delta_mu_j1(&e).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn delta_matches_scaled_particle_gradient() {
        let c = spec(1.3, 0.8);
        let e = sample_initial_ensemble(
            &InitialMeasure::UniformBox { lower: vec![-1.0, -0.5], upper: vec![1.0, 1.5] },
            9,
            4,
            SamplingMode::Random,
        )
        .unwrap();
        let delta = c.delta_mu_j1(&e);
        let n = e.len() as f64;
        let h = 1e-6;
        for idx in 0..e.positions().len() {
            let mut p = e.positions().to_vec();
            p[idx] += h;
            let up = c.running_cost_raw(&p);
            p[idx] -= 2.0 * h;
            let dn = c.running_cost_raw(&p);
            let fd = n * (up - dn) / (2.0 * h);
            assert!((fd - delta[idx]).abs() < 1e-6, "idx {idx}: {fd} vs {}", delta[idx]);
        }
    }

    #[test]
    fn mean_tracking_delta_shifts_affinely() {
        let c = spec(2.0, 0.0);
        let e = ParticleEnsemble::new(2, vec![0.0, 0.0, 1.0, 2.0, -1.0, 0.5]).unwrap();
        let shift = [0.3, -0.7];
        let before = c.delta_mu_j1(&e);
        let after = c.delta_mu_j1(&e.translated(&shift));
        for (i, (a, b)) in before.iter().zip(&after).enumerate() {
            assert!((b - a - 2.0 * shift[i % 2]).abs() < 1e-14);
        }
        // closed form l1 (mean - x_des), identical for every particle
        let m = e.mean();
        assert!((before[0] - 2.0 * (m[0] - 0.5)).abs() < 1e-14);
        assert!((before[5] - 2.0 * (m[1] + 0.25)).abs() < 1e-14);
    }

    #[test]
    fn control_cost_of_ramp() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let c = spec(0.0, 0.0);
        let constant = ControlPath::constant(g, 2, &[0.3, 0.4]).unwrap();
        assert_eq!(c.control_cost(&constant), 0.0);
        let ramp: Vec<f64> = g.nodes().flat_map(|t| [t, 0.0]).collect();
        let ramp = ControlPath::from_values(g, 1, 2, ramp).unwrap();
        assert!((c.control_cost(&ramp) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn running_cost_is_lipschitz_in_w2() {
        use rand::{Rng, SeedableRng};
        let c = spec(1.0, 1.5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for trial in 0..100 {
            let n = rng.random_range(2..12);
            let lo = rng.random_range(-2.0..0.0);
            let hi = lo + rng.random_range(0.1..2.0);
            let m = InitialMeasure::UniformBox { lower: vec![lo, lo], upper: vec![hi, hi] };
            let a = sample_initial_ensemble(&m, n, 2 * trial, SamplingMode::Random).unwrap();
            let b = sample_initial_ensemble(&m, n, 2 * trial + 1, SamplingMode::Random).unwrap();
            let w2 = w2_assignment(a.positions(), b.positions(), 2).unwrap().distance;
            let gap = (c.running_cost(&a) - c.running_cost(&b)).abs();
            assert!(gap <= c.lipschitz_constant(&a, &b) * w2 + 1e-14, "trial {trial}");
        }
    }

    proptest::proptest! {
        #[test]
        fn control_cost_nonnegative(vals in proptest::collection::vec(-3.0f64..3.0, 6)) {
            let g = TimeGrid::new(1.0, 2).unwrap();
            let u = ControlPath::from_values(g, 1, 2, vals.clone()).unwrap();
            let j2 = spec(0.0, 0.0).control_cost(&u);
            proptest::prop_assert!(j2 >= 0.0);
            let constant = vals[0..2] == vals[2..4] && vals[2..4] == vals[4..6];
            proptest::prop_assert_eq!(j2 == 0.0, constant);
        }
    }
}
