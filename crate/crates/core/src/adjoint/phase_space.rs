use crate::costs::CostSpec;
use crate::dynamics::velocity_into;
use crate::error::{Error, Result};
use crate::kernels::{dot, KernelPair};
use crate::model::{AdjointTrajectory, ControlPath, TimeGrid, Trajectory};

/// Pairs `(x^i, xi^i)` per node: the empirical phase-space measure `nu_t^N`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSpaceCloud {
    pub grid: TimeGrid,
    pub dim: usize,
    pub positions: Vec<Vec<f64>>,
    pub momenta: Vec<Vec<f64>>,
}

impl PhaseSpaceCloud {
    pub fn new(traj: &Trajectory, adj: &AdjointTrajectory) -> Result<Self> {
        if !adj.aligned_with(traj) {
            return Err(Error::shape("adjoint is not aligned with the trajectory"));
        }
        Ok(Self {
            grid: *traj.grid(),
            dim: traj.dim(),
            positions: traj.frames().iter().map(|f| f.positions().to_vec()).collect(),
            momenta: adj.frames().to_vec(),
        })
    }

    pub fn particles(&self) -> usize {
        self.positions[0].len() / self.dim
    }

    /// `<phi, nu_k>`.
    pub fn integrate(&self, k: usize, phi: &TestFunction) -> f64 {
        let d = self.dim;
        let n = self.particles();
        (0..n)
            .map(|i| phi.value(&self.positions[k][i * d..(i + 1) * d], &self.momenta[k][i * d..(i + 1) * d]))
            .sum::<f64>()
            / n as f64
    }

    /// Weights of the momentum measure `m_t = (1/N) sum_i xi^i delta_{x^i}` at node `k`.
    pub fn momentum_measure(&self, k: usize) -> Vec<f64> {
        let n = self.particles() as f64;
        self.momenta[k].iter().map(|v| v / n).collect()
    }

    /// Total mass `m_t(R^d)` of the momentum measure.
    pub fn first_moment(&self, k: usize) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d];
        for (j, w) in self.momentum_measure(k).iter().enumerate() {
            out[j % d] += w;
        }
        out
    }
}

/// Smooth test functions `phi(x, xi)` on phase space.
#[derive(Clone, Debug, PartialEq)]
pub enum TestFunction {
    Constant,
    Position(usize),
    Momentum(usize),
    PositionProduct(usize, usize),
    Mixed(usize, usize),
    MomentumProduct(usize, usize),
    /// `exp(-(|x - cx|^2 + |xi - cxi|^2) / (2 w^2))`.
    Bump { center_x: Vec<f64>, center_xi: Vec<f64>, width: f64 },
}

impl TestFunction {
    pub fn name(&self) -> String {
        match self {
            TestFunction::Constant => "one".into(),
            TestFunction::Position(a) => format!("x{a}"),
            TestFunction::Momentum(a) => format!("xi{a}"),
            TestFunction::PositionProduct(a, b) => format!("x{a}*x{b}"),
            TestFunction::Mixed(a, b) => format!("x{a}*xi{b}"),
            TestFunction::MomentumProduct(a, b) => format!("xi{a}*xi{b}"),
            TestFunction::Bump { width, .. } => format!("bump(w={width})"),
        }
    }

    /// Polynomials of degree at most two in `d` dimensions.
    pub fn polynomials(d: usize) -> Vec<TestFunction> {
        let mut out = vec![TestFunction::Constant];
        out.extend((0..d).map(TestFunction::Position));
        out.extend((0..d).map(TestFunction::Momentum));
        for a in 0..d {
            for b in a..d {
                out.push(TestFunction::PositionProduct(a, b));
                out.push(TestFunction::MomentumProduct(a, b));
            }
            for b in 0..d {
                out.push(TestFunction::Mixed(a, b));
            }
        }
        out
    }

    pub fn value(&self, x: &[f64], xi: &[f64]) -> f64 {
        match self {
            TestFunction::Constant => 1.0,
            TestFunction::Position(a) => x[*a],
            TestFunction::Momentum(a) => xi[*a],
            TestFunction::PositionProduct(a, b) => x[*a] * x[*b],
            TestFunction::Mixed(a, b) => x[*a] * xi[*b],
            TestFunction::MomentumProduct(a, b) => xi[*a] * xi[*b],
            TestFunction::Bump { center_x, center_xi, width } => {
                let r2: f64 = x.iter().zip(center_x).chain(xi.iter().zip(center_xi)).map(|(p, c)| (p - c).powi(2)).sum();
                (-0.5 * r2 / (width * width)).exp()
            }
        }
    }

    /// `(grad_x phi, grad_xi phi)`.
    pub fn gradients(&self, x: &[f64], xi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = x.len();
        let (mut gx, mut gxi) = (vec![0.0; d], vec![0.0; d]);
        match self {
            TestFunction::Constant => {}
            TestFunction::Position(a) => gx[*a] = 1.0,
            TestFunction::Momentum(a) => gxi[*a] = 1.0,
            TestFunction::PositionProduct(a, b) => {
                gx[*a] += x[*b];
                gx[*b] += x[*a];
            }
            TestFunction::Mixed(a, b) => {
                gx[*a] = xi[*b];
                gxi[*b] = x[*a];
            }
            TestFunction::MomentumProduct(a, b) => {
                gxi[*a] += xi[*b];
                gxi[*b] += xi[*a];
            }
            TestFunction::Bump { center_x, center_xi, width } => {
                let v = self.value(x, xi);
                let s = -v / (width * width);
                for a in 0..d {
                    gx[a] = s * (x[a] - center_x[a]);
                    gxi[a] = s * (xi[a] - center_xi[a]);
                }
            }
        }
        (gx, gxi)
    }
}

/// Hamiltonian `H(x, xi) = v(x) . xi - (1/N) sum_j K1(x^j - x) . xi^j - sum_l (d_l j) g_l(x)`
/// for the cloud `(positions, momenta)` and controls `u` (`M * d`).
pub fn hamiltonian(x: &[f64], xi: &[f64], positions: &[f64], momenta: &[f64], u: &[f64], kernels: &KernelPair, cost: &CostSpec) -> f64 {
    let d = x.len();
    let n = positions.len() / d;
    let mut v = vec![0.0; d];
    let mut k = vec![0.0; d];
    let mut diff = vec![0.0; d];
    for xj in positions.chunks_exact(d) {
        for a in 0..d {
            diff[a] = x[a] - xj[a];
        }
        kernels.interaction.eval_into(&diff, &mut k);
        v.iter_mut().zip(&k).for_each(|(o, ki)| *o -= ki / n as f64);
    }
    for ul in u.chunks_exact(d) {
        for a in 0..d {
            diff[a] = x[a] - ul[a];
        }
        kernels.control.eval_into(&diff, &mut k);
        v.iter_mut().zip(&k).for_each(|(o, ki)| *o -= ki);
    }
    let mut coupling = 0.0;
    for (xj, xij) in positions.chunks_exact(d).zip(momenta.chunks_exact(d)) {
        for a in 0..d {
            diff[a] = xj[a] - x[a];
        }
        kernels.interaction.eval_into(&diff, &mut k);
        coupling += dot(&k, xij) / n as f64;
    }
    let dj = cost.outer_grad(&cost.moments_raw(positions));
    let payoff: f64 = cost.observables().iter().zip(&dj).map(|(g, w)| w * g.value(x)).sum();
    dot(&v, xi) - coupling - payoff
}

/// `grad_x H` at `x`, assembled from full kernel Jacobians.
fn hamiltonian_grad_x(x: &[f64], xi: &[f64], positions: &[f64], momenta: &[f64], u: &[f64], delta: &[f64], kernels: &KernelPair) -> Vec<f64> {
    let d = x.len();
    let n = positions.len() / d;
    let mut dv = vec![0.0; d * d];
    let mut diff = vec![0.0; d];
    for xj in positions.chunks_exact(d) {
        for a in 0..d {
            diff[a] = x[a] - xj[a];
        }
        for (o, j) in dv.iter_mut().zip(kernels.interaction.jacobian(&diff)) {
            *o -= j / n as f64;
        }
    }
    for ul in u.chunks_exact(d) {
        for a in 0..d {
            diff[a] = x[a] - ul[a];
        }
        for (o, j) in dv.iter_mut().zip(kernels.control.jacobian(&diff)) {
            *o -= j;
        }
    }
    // (Dv)^T xi
    let mut out: Vec<f64> = (0..d).map(|b| (0..d).map(|a| dv[a * d + b] * xi[a]).sum()).collect();
    for (xj, xij) in positions.chunks_exact(d).zip(momenta.chunks_exact(d)) {
        for a in 0..d {
            diff[a] = xj[a] - x[a];
        }
        let jac = kernels.interaction.jacobian(&diff);
        for b in 0..d {
            out[b] += (0..d).map(|a| jac[a * d + b] * xij[a]).sum::<f64>() / n as f64;
        }
    }
    for b in 0..d {
        out[b] -= delta[b];
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeakFormRow {
    pub t: f64,
    pub function: String,
    /// Centered difference of `<phi, nu_t>`.
    pub lhs: f64,
    /// `<grad_x phi . grad_xi H - grad_xi phi . grad_x H, nu_t>`.
    pub rhs: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSpaceReport {
    pub rows: Vec<WeakFormRow>,
    pub max_residual: f64,
    /// Largest discrepancy between the momentum-measure mass and `(1/N) sum_i xi^i`.
    pub moment_gap: f64,
    /// `max_i |xi_T^i|`; zero by construction of the terminal condition.
    pub terminal_momentum: f64,
}

/// Weak form of the phase-space evolution tested against `functions` at interior nodes.
pub fn phase_space_diagnostics(
    traj: &Trajectory,
    adj: &AdjointTrajectory,
    u: &ControlPath,
    kernels: &KernelPair,
    cost: &CostSpec,
    functions: &[TestFunction],
) -> Result<PhaseSpaceReport> {
    let cloud = PhaseSpaceCloud::new(traj, adj)?;
    if u.grid() != traj.grid() || u.dim() != traj.dim() {
        return Err(Error::shape("control does not match the trajectory"));
    }
    let grid = cloud.grid;
    let d = cloud.dim;
    let n = cloud.particles();
    let dt = grid.dt();
    let integrals: Vec<Vec<f64>> = functions.iter().map(|f| (0..grid.n_nodes()).map(|k| cloud.integrate(k, f)).collect()).collect();
    let mut rows = Vec::new();
    let mut v = vec![0.0; n * d];
    for k in 1..grid.n_steps() {
        let (pos, mom) = (&cloud.positions[k], &cloud.momenta[k]);
        velocity_into(pos, u.node(k), d, kernels, &mut v);
        let delta = cost.delta_mu_j1_raw(pos);
        let grads_x: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let r = i * d..(i + 1) * d;
                hamiltonian_grad_x(&pos[r.clone()], &mom[r.clone()], pos, mom, u.node(k), &delta[r], kernels)
            })
            .collect();
        for (f, ints) in functions.iter().zip(&integrals) {
            let lhs = (ints[k + 1] - ints[k - 1]) / (2.0 * dt);
            let rhs = (0..n)
                .map(|i| {
                    let r = i * d..(i + 1) * d;
                    let (gx, gxi) = f.gradients(&pos[r.clone()], &mom[r.clone()]);
                    dot(&gx, &v[r]) - dot(&gxi, &grads_x[i])
                })
                .sum::<f64>()
                / n as f64;
            rows.push(WeakFormRow { t: grid.node(k), function: f.name(), lhs, rhs, residual: (lhs - rhs).abs() });
        }
    }
    let max_residual = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    let moment_gap = (0..grid.n_nodes())
        .map(|k| {
            let direct: Vec<f64> = (0..d).map(|a| (0..n).map(|i| cloud.momenta[k][i * d + a]).sum::<f64>() / n as f64).collect();
            cloud.first_moment(k).iter().zip(&direct).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    let terminal_momentum = cloud.momenta[grid.n_steps()].iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    Ok(PhaseSpaceReport { rows, max_residual, moment_gap, terminal_momentum })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;

    #[test]
    fn hamiltonian_gradient_matches_finite_differences() {
        let kernels = KernelPair::new(KernelSpec::gaussian(-0.5, 1.0), KernelSpec::gaussian(0.5, 0.5));
        let cost = CostSpec { target: vec![0.5, 0.0], mean_weight: 1.0, variance_weight: 1.0, regularization: 1.0 };
        let positions = [0.1, -0.2, 0.4, 0.3, -0.3, 0.05];
        let momenta = [0.2, 0.1, -0.4, 0.3, 0.05, -0.2];
        let u = [-1.0, 0.4, -0.8, -0.3];
        let (x, xi) = ([0.25, -0.1], [0.3, -0.7]);
        let delta = {
            let dj = cost.outer_grad(&cost.moments_raw(&positions));
            let mut out = vec![0.0; 2];
            for (g, w) in cost.observables().iter().zip(&dj) {
                g.grad_acc(&x, *w, &mut out);
            }
            out
        };
        let grad = hamiltonian_grad_x(&x, &xi, &positions, &momenta, &u, &delta, &kernels);
        let h = 1e-6;
        for a in 0..2 {
            let (mut p, mut m) = (x, x);
            p[a] += h;
            m[a] -= h;
            let fd = (hamiltonian(&p, &xi, &positions, &momenta, &u, &kernels, &cost)
                - hamiltonian(&m, &xi, &positions, &momenta, &u, &kernels, &cost))
                / (2.0 * h);
            assert!((fd - grad[a]).abs() < 1e-8, "axis {a}: {fd} vs {}", grad[a]);
        }
    }

    #[test]
    fn test_function_gradients_match_finite_differences() {
        let x = [0.3, -0.2];
        let xi = [0.7, 0.1];
        let mut fns = TestFunction::polynomials(2);
        fns.push(TestFunction::Bump { center_x: vec![0.1, 0.0], center_xi: vec![0.5, 0.2], width: 0.8 });
        let h = 1e-6;
        for f in &fns {
            let (gx, gxi) = f.gradients(&x, &xi);
            for a in 0..2 {
                let (mut p, mut m) = (x, x);
                p[a] += h;
                m[a] -= h;
                assert!(((f.value(&p, &xi) - f.value(&m, &xi)) / (2.0 * h) - gx[a]).abs() < 1e-8, "{}", f.name());
                let (mut p, mut m) = (xi, xi);
                p[a] += h;
                m[a] -= h;
                assert!(((f.value(&x, &p) - f.value(&x, &m)) / (2.0 * h) - gxi[a]).abs() < 1e-8, "{}", f.name());
            }
        }
    }
}
