//! Reduced gradient of `u -> J(x(u), u)` from the particle adjoint, in the nodal (`L2`) and
//! Sobolev (`H1`) representations, and the residual of the control optimality system.

use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::kernels::KernelPair;
use crate::model::{AdjointTrajectory, ControlPath, Trajectory};
use crate::quadrature::GAUSS3;

/// `b_j = int_0^T c(t) phi_j(t) dt` for every node `j`, with hat functions `phi_j` and the
/// coupling `c^l(t) = (1/N) sum_i DK2(x^i - u^l) xi^i`. Layout matches [`ControlPath`].
pub fn coupling_loads(traj: &Trajectory, adj: &AdjointTrajectory, u: &ControlPath, kernels: &KernelPair) -> Result<Vec<f64>> {
    if !adj.aligned_with(traj) || u.grid() != traj.grid() || u.dim() != traj.dim() {
        return Err(Error::shape("gradient assembly needs aligned trajectory, adjoint and control"));
    }
    let grid = traj.grid();
    let (n_p, d, m) = (traj.particles(), traj.dim(), u.agents());
    let stride = m * d;
    let mut loads = vec![0.0; grid.n_nodes() * stride];
    if kernels.control.is_zero() || m == 0 {
        return Ok(loads);
    }
    let dt = grid.dt();
    let (mut x, mut xi) = (vec![0.0; n_p * d], vec![0.0; n_p * d]);
    let mut ut = vec![0.0; stride];
    let mut c = vec![0.0; stride];
    let mut diff = vec![0.0; d];
    for k in 0..grid.n_steps() {
        for &(s, w) in &GAUSS3 {
            traj.interval_positions(k, s, &mut x);
            adj.interval_values(k, s, &mut xi);
            u.eval_into(grid.node(k) + s * dt, &mut ut);
            c.iter_mut().for_each(|v| *v = 0.0);
            for l in 0..m {
                let ul = &ut[l * d..(l + 1) * d];
                let cl = &mut c[l * d..(l + 1) * d];
                for i in 0..n_p {
                    for a in 0..d {
                        diff[a] = x[i * d + a] - ul[a];
                    }
                    kernels.control.apply_jacobian_acc(&diff, &xi[i * d..(i + 1) * d], 1.0 / n_p as f64, cl);
                }
            }
            for j in 0..stride {
                loads[k * stride + j] += w * dt * (1.0 - s) * c[j];
                loads[(k + 1) * stride + j] += w * dt * s * c[j];
            }
        }
    }
    Ok(loads)
}

/// Nodal gradient `G_j = d J / d u_j` (node 0 excluded by admissibility and set to zero):
/// `dJ[h] = sum_j G_j . h_j`.
fn nodal_gradient(u: &ControlPath, loads: &[f64], lambda: f64) -> Vec<f64> {
    let grid = u.grid();
    let n = grid.n_steps();
    let dt = grid.dt();
    let s = u.agents() * u.dim();
    let vals = u.values();
    let mut g = vec![0.0; loads.len()];
    for k in 1..=n {
        for j in 0..s {
            let here = vals[k * s + j];
            let stiff = if k < n {
                (2.0 * here - vals[(k - 1) * s + j] - vals[(k + 1) * s + j]) / dt
            } else {
                (here - vals[(k - 1) * s + j]) / dt
            };
            g[k * s + j] = lambda * stiff - loads[k * s + j];
        }
    }
    g
}

/// Solves `(1/dt)(2 w_j - w_{j-1} - w_{j+1}) = b_j` for `1 <= j < n`, `(1/dt)(w_n - w_{n-1}) = b_n`,
/// `w_0 = 0`, independently for every component of the node-major layout.
pub fn solve_h1_riesz(b: &[f64], n: usize, stride: usize, dt: f64) -> Vec<f64> {
    let mut w = vec![0.0; b.len()];
    if stride == 0 {
        return w;
    }
    let mut cp = vec![0.0; n + 1];
    let mut dp = vec![0.0; n + 1];
    for comp in 0..stride {
        // Thomas algorithm on rows 1..=n; off-diagonals are -1/dt
        let off = -1.0 / dt;
        for j in 1..=n {
            let diag = if j < n { 2.0 / dt } else { 1.0 / dt };
            let rhs = b[j * stride + comp];
            if j == 1 {
                cp[j] = off / diag;
                dp[j] = rhs / diag;
            } else {
                let denom = diag - off * cp[j - 1];
                cp[j] = off / denom;
                dp[j] = (rhs - off * dp[j - 1]) / denom;
            }
        }
        w[n * stride + comp] = dp[n];
        for j in (1..n).rev() {
            w[j * stride + comp] = dp[j] - cp[j] * w[(j + 1) * stride + comp];
        }
    }
    w
}

/// Both gradient representations of the reduced cost at one control.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    pub control: ControlPath,
    pub regularization: f64,
    /// Coupling loads `b_j = int c phi_j`.
    pub loads: Vec<f64>,
    /// `L2` gradient: the nodal gradient divided by the lumped mass of each node.
    pub l2: ControlPath,
    /// `H1` Riesz representer `z` with `z_0 = 0`.
    pub h1: ControlPath,
    pub l2_norm: f64,
    pub h1_norm: f64,
}

impl GradientReport {
    /// `dJ(u)[h] = lambda sum_k dt u'_k . h'_k - int c . h`.
    pub fn directional(&self, h: &ControlPath) -> Result<f64> {
        if h.grid() != self.control.grid() || h.values().len() != self.loads.len() {
            return Err(Error::shape("direction does not match the control layout"));
        }
        let pairing: f64 = h.values().iter().zip(&self.loads).map(|(a, b)| a * b).sum();
        Ok(self.regularization * self.control.h1_inner(h)? - pairing)
    }
}

pub fn reduced_gradient(
    traj: &Trajectory,
    adj: &AdjointTrajectory,
    u: &ControlPath,
    kernels: &KernelPair,
    cost: &CostSpec,
) -> Result<GradientReport> {
    let loads = coupling_loads(traj, adj, u, kernels)?;
    let lambda = cost.regularization;
    let grid = *u.grid();
    let (n, dt) = (grid.n_steps(), grid.dt());
    let s = u.agents() * u.dim();

    let nodal = nodal_gradient(u, &loads, lambda);
    let l2_vals: Vec<f64> = nodal
        .iter()
        .enumerate()
        .map(|(idx, g)| {
            let k = idx / s.max(1);
            let mass = if k == 0 || k == n { 0.5 * dt } else { dt };
            if k == 0 { 0.0 } else { g / mass }
        })
        .collect();
    let l2 = ControlPath::from_values(grid, u.agents(), u.dim(), l2_vals)?;

    let w = solve_h1_riesz(&loads, n, s, dt);
    let init = u.initial();
    let z_vals: Vec<f64> = u
        .values()
        .iter()
        .enumerate()
        .map(|(idx, v)| if idx < s { 0.0 } else { lambda * (v - init[idx % s]) - w[idx] })
        .collect();
    let h1 = ControlPath::from_values(grid, u.agents(), u.dim(), z_vals)?;
    let l2_norm = l2.l2_norm_sq().sqrt();
    let h1_norm = h1.h1_seminorm_sq().sqrt();
    Ok(GradientReport { control: u.clone(), regularization: lambda, loads, l2, h1, l2_norm, h1_norm })
}

/// Discrete `H^{-1}` residual of `lambda u'' = c`, `u(0) = u_0`, `u'(T) = 0`:
/// with `R_j = dJ[phi_j]`, the representer slopes are `z'_k = sum_{j > k} R_j`
/// and the residual is `(sum_k dt |z'_k|^2)^{1/2}`.
pub fn optimality_residual(u: &ControlPath, traj: &Trajectory, adj: &AdjointTrajectory, kernels: &KernelPair, lambda: f64) -> Result<f64> {
    let loads = coupling_loads(traj, adj, u, kernels)?;
    let nodal = nodal_gradient(u, &loads, lambda);
    let grid = u.grid();
    let (n, dt) = (grid.n_steps(), grid.dt());
    let s = u.agents() * u.dim();
    let mut slope = vec![0.0; s];
    let mut total = 0.0;
    for k in (0..n).rev() {
        for j in 0..s {
            slope[j] += nodal[(k + 1) * s + j];
        }
        total += dt * slope.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn riesz_solve_satisfies_its_equations() {
        let (n, s, dt) = (7usize, 2usize, 0.1);
        let b: Vec<f64> = (0..(n + 1) * s).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3).collect();
        let w = solve_h1_riesz(&b, n, s, dt);
        for c in 0..s {
            assert_eq!(w[c], 0.0);
            for j in 1..n {
                let lhs = (2.0 * w[j * s + c] - w[(j - 1) * s + c] - w[(j + 1) * s + c]) / dt;
                assert!((lhs - b[j * s + c]).abs() < 1e-12);
            }
            let lhs = (w[n * s + c] - w[(n - 1) * s + c]) / dt;
            assert!((lhs - b[n * s + c]).abs() < 1e-12);
        }
    }
}
