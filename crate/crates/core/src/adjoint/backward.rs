use super::field_adjoint_rhs;
use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::kernels::KernelPair;
use crate::model::{AdjointTrajectory, ControlPath, Trajectory, VectorSeries};

/// Backward RK4 from `xi_T = 0` on the forward grid; off-node states come from the cubic
/// Hermite interpolant of the stored frames and velocities.
pub fn adjoint_solve_backward(
    traj: &Trajectory,
    u: &ControlPath,
    kernels: &KernelPair,
    cost: &CostSpec,
) -> Result<AdjointTrajectory> {
    adjoint_solve_field(traj, traj.particles(), u, kernels, cost)
}

/// Backward adjoint for a trajectory from `forward_solve_with_tracers`: the first `sources`
/// particles form the field, the remaining ones carry the adjoint of that field along their
/// own characteristics. The source block coincides bitwise with the plain backward solve.
pub fn adjoint_solve_with_tracers(
    traj: &Trajectory,
    sources: usize,
    u: &ControlPath,
    kernels: &KernelPair,
    cost: &CostSpec,
) -> Result<AdjointTrajectory> {
    if sources == 0 || sources > traj.particles() {
        return Err(Error::shape(format!("{sources} field particles out of {}", traj.particles())));
    }
    adjoint_solve_field(traj, sources, u, kernels, cost)
}

fn adjoint_solve_field(traj: &Trajectory, sources: usize, u: &ControlPath, kernels: &KernelPair, cost: &CostSpec) -> Result<AdjointTrajectory> {
    let grid = *traj.grid();
    if u.grid() != &grid || u.dim() != traj.dim() || cost.dim() != traj.dim() {
        return Err(Error::shape("adjoint solve needs trajectory, control and cost of one shape"));
    }
    let d = traj.dim();
    let len = traj.particles() * d;
    let dt = grid.dt();
    let n = grid.n_steps();
    let mut frames = vec![Vec::new(); n + 1];
    let mut rates = vec![Vec::new(); n + 1];
    let mut xi = vec![0.0; len];
    let (mut k2, mut k3, mut k4, mut stage) = (vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    let mut xh = vec![0.0; len];
    let mut uh = vec![0.0; u.agents() * d];
    let ns = sources * d;
    let delta = |x: &[f64]| cost.delta_mu_j1_at(&x[..ns], x);
    let rhs = |x: &[f64], xi: &[f64], c: &[f64], dl: &[f64], out: &mut [f64]| {
        field_adjoint_rhs(x, xi, &x[..ns], &xi[..ns], c, dl, d, kernels, out)
    };
    let mut k1 = vec![0.0; len];
    let terminal = traj.frame(n).positions();
    rhs(terminal, &xi, u.node(n), &delta(terminal), &mut k1);
    for k in (0..n).rev() {
        frames[k + 1] = xi.clone();
        rates[k + 1] = k1.clone();
        traj.interval_positions(k, 0.5, &mut xh);
        u.eval_into(grid.node(k) + 0.5 * dt, &mut uh);
        let delta_half = delta(&xh);
        for j in 0..len {
            stage[j] = xi[j] - 0.5 * dt * k1[j];
        }
        rhs(&xh, &stage, &uh, &delta_half, &mut k2);
        for j in 0..len {
            stage[j] = xi[j] - 0.5 * dt * k2[j];
        }
        rhs(&xh, &stage, &uh, &delta_half, &mut k3);
        for j in 0..len {
            stage[j] = xi[j] - dt * k3[j];
        }
        let x0 = traj.frame(k).positions();
        let delta0 = delta(x0);
        rhs(x0, &stage, u.node(k), &delta0, &mut k4);
        for j in 0..len {
            xi[j] -= dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "backward adjoint", node: k });
        }
        rhs(x0, &xi, u.node(k), &delta0, &mut k1);
    }
    frames[0] = xi;
    rates[0] = k1;
    VectorSeries::new(grid, traj.particles(), d, frames, rates)
}
