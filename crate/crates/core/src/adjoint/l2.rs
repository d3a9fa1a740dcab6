use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::kernels::KernelPair;
use crate::model::{AdjointTrajectory, ControlPath, TimeGrid, Trajectory};

/// Scalar adjoint `q` sampled along the particle characteristics in one dimension,
/// together with its spatial derivative differenced across neighboring characteristics.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarAdjoint {
    pub grid: TimeGrid,
    /// `q(t_k, x_k^i)`, one vector of length `N` per node.
    pub values: Vec<Vec<f64>>,
    /// `d/dx q(t_k, x_k^i)`.
    pub gradients: Vec<Vec<f64>>,
}

/// Derivative at `xs[target]` of the parabola through `(xs, ys)`.
fn lagrange3_derivative(xs: [f64; 3], ys: [f64; 3], target: usize) -> f64 {
    let x = xs[target];
    let mut out = 0.0;
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        let denom = (xs[i] - xs[j]) * (xs[i] - xs[k]);
        // derivative of (x - xj)(x - xk) / denom
        out += ys[i] * ((x - xs[j]) + (x - xs[k])) / denom;
    }
    out
}

/// Second-order differences along the sorted order `perm`; ends use one-sided stencils.
fn gradient_on_characteristics(x: &[f64], q: &[f64], perm: &[usize], node: usize, out: &mut [f64]) -> Result<()> {
    let n = perm.len();
    for w in perm.windows(2) {
        if x[w[1]] <= x[w[0]] {
            return Err(Error::CharacteristicCrossing { node, left: w[0], right: w[1] });
        }
    }
    for r in 0..n {
        let (start, target) = match r {
            0 => (0, 0),
            _ if r == n - 1 => (n - 3, 2),
            _ => (r - 1, 1),
        };
        let idx = [perm[start], perm[start + 1], perm[start + 2]];
        out[perm[r]] = lagrange3_derivative(idx.map(|i| x[i]), idx.map(|i| q[i]), target);
    }
    Ok(())
}

/// `dq^i/dt = (1/N) sum_j K1(x^j - x^i) dq/dx(x^j) + sum_l (d_l j) g_l(x^i)`.
#[allow(clippy::too_many_arguments)]
fn scalar_rhs(
    x: &[f64],
    q: &[f64],
    perm: &[usize],
    node: usize,
    source: &[f64],
    kernels: &KernelPair,
    grad: &mut [f64],
    out: &mut [f64],
) -> Result<()> {
    gradient_on_characteristics(x, q, perm, node, grad)?;
    let n = x.len();
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let mut acc = source[i];
        if !kernels.interaction.is_zero() {
            let mut k = [0.0];
            for j in 0..n {
                kernels.interaction.eval_into(&[x[j] - x[i]], &mut k);
                acc += inv_n * k[0] * grad[j];
            }
        }
        out[i] = acc;
    }
    Ok(())
}

/// Backward RK4 for the scalar adjoint from `q_T = 0` along the stored characteristics (`d = 1`).
pub fn l2_adjoint_solve_1d(traj: &Trajectory, u: &ControlPath, kernels: &KernelPair, cost: &CostSpec) -> Result<ScalarAdjoint> {
    if traj.dim() != 1 || cost.dim() != 1 {
        return Err(Error::Unsupported(format!("the scalar adjoint is implemented for d = 1 only, got d = {}", traj.dim())));
    }
    if u.grid() != traj.grid() || u.dim() != 1 {
        return Err(Error::shape("scalar adjoint needs trajectory and control on one grid"));
    }
    let n_p = traj.particles();
    if n_p < 3 {
        return Err(Error::shape("differencing across characteristics needs at least 3 particles"));
    }
    let grid = *traj.grid();
    let dt = grid.dt();
    let n = grid.n_steps();
    let x_init = traj.frame(0).positions();
    let mut perm: Vec<usize> = (0..n_p).collect();
    perm.sort_by(|&a, &b| x_init[a].total_cmp(&x_init[b]));

    let mut values = vec![Vec::new(); n + 1];
    let mut gradients = vec![Vec::new(); n + 1];
    let mut q = vec![0.0; n_p];
    let mut grad = vec![0.0; n_p];
    let (mut k1, mut k2, mut k3, mut k4, mut stage) = (vec![0.0; n_p], vec![0.0; n_p], vec![0.0; n_p], vec![0.0; n_p], vec![0.0; n_p]);
    let mut xh = vec![0.0; n_p];
    let terminal = traj.frame(n).positions();
    scalar_rhs(terminal, &q, &perm, n, &cost.first_variation_raw(terminal), kernels, &mut grad, &mut k1)?;
    for k in (0..n).rev() {
        values[k + 1] = q.clone();
        gradients[k + 1] = grad.clone();
        traj.interval_positions(k, 0.5, &mut xh);
        let src_half = cost.first_variation_raw(&xh);
        for j in 0..n_p {
            stage[j] = q[j] - 0.5 * dt * k1[j];
        }
        scalar_rhs(&xh, &stage, &perm, k, &src_half, kernels, &mut grad, &mut k2)?;
        for j in 0..n_p {
            stage[j] = q[j] - 0.5 * dt * k2[j];
        }
        scalar_rhs(&xh, &stage, &perm, k, &src_half, kernels, &mut grad, &mut k3)?;
        for j in 0..n_p {
            stage[j] = q[j] - dt * k3[j];
        }
        let x0 = traj.frame(k).positions();
        let src0 = cost.first_variation_raw(x0);
        scalar_rhs(x0, &stage, &perm, k, &src0, kernels, &mut grad, &mut k4)?;
        for j in 0..n_p {
            q[j] -= dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "scalar adjoint", node: k });
        }
        scalar_rhs(x0, &q, &perm, k, &src0, kernels, &mut grad, &mut k1)?;
    }
    values[0] = q;
    gradients[0] = grad;
    Ok(ScalarAdjoint { grid, values, gradients })
}

/// `max_{k,i} |dq/dx(x_k^i) - xi_k^i| / max_{k,i} |xi_k^i|`.
pub fn gradient_relation_residual(scalar: &ScalarAdjoint, adjoint: &AdjointTrajectory) -> Result<f64> {
    if scalar.grid != *adjoint.grid() || adjoint.dim() != 1 || scalar.values[0].len() != adjoint.particles() {
        return Err(Error::shape("scalar adjoint and particle adjoint are not aligned"));
    }
    let scale = adjoint.sup_norm();
    let gap = scalar
        .gradients
        .iter()
        .zip(adjoint.frames())
        .flat_map(|(g, xi)| g.iter().zip(xi).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    Ok(if scale > 0.0 { gap / scale } else { gap })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parabola_derivative_is_exact() {
        let f = |x: f64| 3.0 * x * x - 2.0 * x + 1.0;
        let df = |x: f64| 6.0 * x - 2.0;
        let xs = [0.1, 0.35, 0.9];
        for t in 0..3 {
            assert!((lagrange3_derivative(xs, xs.map(f), t) - df(xs[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn crossing_is_reported() {
        let x = [0.0, 2.0, 1.0];
        let mut out = [0.0; 3];
        let err = gradient_on_characteristics(&x, &[0.0; 3], &[0, 1, 2], 7, &mut out).unwrap_err();
        assert!(matches!(err, Error::CharacteristicCrossing { node: 7, left: 1, right: 2 }));
    }
}
