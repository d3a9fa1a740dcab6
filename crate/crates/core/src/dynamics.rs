//! Forward particle dynamics, the linearized state along stored characteristics, and the
//! Dobrushin-type stability diagnostic.
//!
//! Velocity field: `v_i = -(1/N) sum_j K1(x^i - x^j) - sum_l K2(x^i - u^l)`, self term included.

use rayon::prelude::*;

use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::kernels::{dot, KernelPair};
use crate::model::{ControlPath, ParticleEnsemble, Trajectory, VectorSeries};
use crate::quadrature::GAUSS3;
use crate::wasserstein::w2_assignment;

/// Particle counts above which force loops are split across the rayon pool.
const PARALLEL_THRESHOLD: usize = 96;

/// Runs `f(i, out_i)` for every particle, in parallel for large clouds.
/// Each particle's sum is evaluated in a fixed order, so results do not depend on scheduling.
pub(crate) fn for_each_particle(out: &mut [f64], d: usize, f: impl Fn(usize, &mut [f64]) + Sync + Send) {
    let n = out.len() / d;
    if n >= PARALLEL_THRESHOLD {
        out.par_chunks_mut(d).enumerate().for_each(|(i, o)| f(i, o));
    } else {
        out.chunks_mut(d).enumerate().for_each(|(i, o)| f(i, o));
    }
}

fn velocity_fixed<const D: usize>(targets: &[f64], positions: &[f64], controls: &[f64], kernels: &KernelPair, out: &mut [f64]) {
    let n = positions.len() / D;
    let inv_n = 1.0 / n as f64;
    let k1 = kernels.interaction.radial();
    let k2 = kernels.control.radial();
    for_each_particle(out, D, |i, o| {
        let mut xi = [0.0; D];
        xi.copy_from_slice(&targets[i * D..(i + 1) * D]);
        let mut acc = [0.0; D];
        if let Some(k) = k1 {
            let mut inner = [0.0; D];
            for xj in positions.chunks_exact(D) {
                let mut diff = [0.0; D];
                let mut r2 = 0.0;
                for a in 0..D {
                    diff[a] = xi[a] - xj[a];
                    r2 += diff[a] * diff[a];
                }
                let c = k.coeff(r2);
                for a in 0..D {
                    inner[a] += c * diff[a];
                }
            }
            for a in 0..D {
                acc[a] -= inv_n * inner[a];
            }
        }
        if let Some(k) = k2 {
            for ul in controls.chunks_exact(D) {
                let mut diff = [0.0; D];
                let mut r2 = 0.0;
                for a in 0..D {
                    diff[a] = xi[a] - ul[a];
                    r2 += diff[a] * diff[a];
                }
                let c = k.coeff(r2);
                for a in 0..D {
                    acc[a] -= c * diff[a];
                }
            }
        }
        o.copy_from_slice(&acc);
    });
}

fn velocity_any(targets: &[f64], positions: &[f64], controls: &[f64], d: usize, kernels: &KernelPair, out: &mut [f64]) {
    let n = positions.len() / d;
    let inv_n = 1.0 / n as f64;
    for_each_particle(out, d, |i, o| {
        o.iter_mut().for_each(|v| *v = 0.0);
        let xi = &targets[i * d..(i + 1) * d];
        let mut diff = vec![0.0; d];
        let mut k = vec![0.0; d];
        for xj in positions.chunks_exact(d) {
            for a in 0..d {
                diff[a] = xi[a] - xj[a];
            }
            kernels.interaction.eval_into(&diff, &mut k);
            o.iter_mut().zip(&k).for_each(|(v, ka)| *v -= inv_n * ka);
        }
        for ul in controls.chunks_exact(d) {
            for a in 0..d {
                diff[a] = xi[a] - ul[a];
            }
            kernels.control.eval_into(&diff, &mut k);
            o.iter_mut().zip(&k).for_each(|(v, ka)| *v -= ka);
        }
    });
}

/// Velocity for raw positions (`N * d`) and raw control positions (`M * d`).
pub fn velocity_into(positions: &[f64], controls: &[f64], d: usize, kernels: &KernelPair, out: &mut [f64]) {
    field_velocity_into(positions, positions, controls, d, kernels, out);
}

/// `v(mu^N, u)` evaluated at arbitrary `targets`, with `mu^N` given by `positions`.
pub fn field_velocity_into(targets: &[f64], positions: &[f64], controls: &[f64], d: usize, kernels: &KernelPair, out: &mut [f64]) {
    match d {
        1 => velocity_fixed::<1>(targets, positions, controls, kernels, out),
        2 => velocity_fixed::<2>(targets, positions, controls, kernels, out),
        3 => velocity_fixed::<3>(targets, positions, controls, kernels, out),
        _ => velocity_any(targets, positions, controls, d, kernels, out),
    }
}

/// `v(mu^N, u)(x^i)` at every particle for controls `u_at_t` (`M * d`).
pub fn velocity(ensemble: &ParticleEnsemble, u_at_t: &[f64], kernels: &KernelPair) -> Result<Vec<f64>> {
    if !u_at_t.len().is_multiple_of(ensemble.dim()) {
        return Err(Error::shape("control positions do not match the ensemble dimension"));
    }
    let mut out = vec![0.0; ensemble.positions().len()];
    velocity_into(ensemble.positions(), u_at_t, ensemble.dim(), kernels, &mut out);
    Ok(out)
}

fn check_finite(values: &[f64], context: &'static str, node: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { context, node })
    }
}

/// Classical RK4 on the control grid, controls interpolated linearly at the half steps.
pub fn forward_solve(initial: &ParticleEnsemble, u: &ControlPath, kernels: &KernelPair) -> Result<Trajectory> {
    forward_solve_field(initial, initial.len(), u, kernels)
}

/// Forward solve of `reference` together with passive `tracers` that feel the field of the
/// reference cloud but do not act on it. The first `reference.len()` particles of the result
/// coincide bitwise with `forward_solve(reference, ..)`.
pub fn forward_solve_with_tracers(
    reference: &ParticleEnsemble,
    tracers: &ParticleEnsemble,
    u: &ControlPath,
    kernels: &KernelPair,
) -> Result<Trajectory> {
    if reference.dim() != tracers.dim() {
        return Err(Error::shape("reference and tracer clouds differ in dimension"));
    }
    let mut all = reference.positions().to_vec();
    all.extend_from_slice(tracers.positions());
    forward_solve_field(&ParticleEnsemble::new(reference.dim(), all)?, reference.len(), u, kernels)
}

fn forward_solve_field(initial: &ParticleEnsemble, sources: usize, u: &ControlPath, kernels: &KernelPair) -> Result<Trajectory> {
    let d = initial.dim();
    let ns = sources * d;
    let field = |x: &[f64], c: &[f64], out: &mut [f64]| field_velocity_into(x, &x[..ns], c, d, kernels, out);
    if u.dim() != d {
        return Err(Error::shape(format!("control dimension {} differs from state dimension {d}", u.dim())));
    }
    let grid = *u.grid();
    let dt = grid.dt();
    let len = initial.positions().len();
    let mut x = initial.positions().to_vec();
    let mut frames = Vec::with_capacity(grid.n_nodes());
    let mut velocities = Vec::with_capacity(grid.n_nodes());
    let (mut k2, mut k3, mut k4, mut stage) = (vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    let mut half = vec![0.0; u.agents() * d];
    let mut k1 = vec![0.0; len];
    field(&x, u.node(0), &mut k1);
    for k in 0..grid.n_steps() {
        check_finite(&x, "forward state", k)?;
        frames.push(ParticleEnsemble::new(d, x.clone())?);
        velocities.push(k1.clone());
        u.eval_into(grid.node(k) + 0.5 * dt, &mut half);
        for j in 0..len {
            stage[j] = x[j] + 0.5 * dt * k1[j];
        }
        field(&stage, &half, &mut k2);
        for j in 0..len {
            stage[j] = x[j] + 0.5 * dt * k2[j];
        }
        field(&stage, &half, &mut k3);
        for j in 0..len {
            stage[j] = x[j] + dt * k3[j];
        }
        field(&stage, u.node(k + 1), &mut k4);
        for j in 0..len {
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        field(&x, u.node(k + 1), &mut k1);
    }
    let n = grid.n_steps();
    check_finite(&x, "forward state", n)?;
    check_finite(&k1, "forward velocity", n)?;
    frames.push(ParticleEnsemble::new(d, x)?);
    velocities.push(k1);
    Trajectory::new(grid, frames, velocities)
}

/// One of the three terms of the linearized velocity, selectable for sign-flip mutation tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinearizationTerm {
    /// `-(1/N) sum_j DK1(x^i - x^j) psi_i`.
    Transport,
    /// `+(1/N) sum_j DK1(x^i - x^j) psi_j`.
    Interaction,
    /// `sum_l DK2(x^i - u^l) (h^l - psi_i)`, i.e. the control perturbation response.
    Control,
}

/// `dpsi_i/dt = -(1/N) sum_j DK1(x^i - x^j)(psi_i - psi_j) + sum_l DK2(x^i - u^l)(h^l - psi_i)`.
#[allow(clippy::too_many_arguments)]
fn linearized_rhs(
    x: &[f64],
    psi: &[f64],
    u: &[f64],
    h: &[f64],
    d: usize,
    kernels: &KernelPair,
    flip: Option<LinearizationTerm>,
    out: &mut [f64],
) {
    let n = x.len() / d;
    let inv_n = 1.0 / n as f64;
    let sign = |term| if flip == Some(term) { -1.0 } else { 1.0 };
    let (s_t, s_i, s_c) = (sign(LinearizationTerm::Transport), sign(LinearizationTerm::Interaction), sign(LinearizationTerm::Control));
    for_each_particle(out, d, |i, o| {
        o.iter_mut().for_each(|v| *v = 0.0);
        let xi = &x[i * d..(i + 1) * d];
        let pi = &psi[i * d..(i + 1) * d];
        let mut diff = vec![0.0; d];
        let mut rel = vec![0.0; d];
        if !kernels.interaction.is_zero() {
            for j in 0..n {
                let xj = &x[j * d..(j + 1) * d];
                let pj = &psi[j * d..(j + 1) * d];
                for a in 0..d {
                    diff[a] = xi[a] - xj[a];
                    rel[a] = s_t * pi[a] - s_i * pj[a];
                }
                kernels.interaction.apply_jacobian_acc(&diff, &rel, -inv_n, o);
            }
        }
        if !kernels.control.is_zero() {
            for (ul, hl) in u.chunks_exact(d).zip(h.chunks_exact(d)) {
                for a in 0..d {
                    diff[a] = xi[a] - ul[a];
                    rel[a] = s_c * hl[a] - pi[a];
                }
                kernels.control.apply_jacobian_acc(&diff, &rel, 1.0, o);
            }
        }
    });
}

/// The derivative `psi_t = d/d delta x_t(u + delta h)` at `delta = 0`, with `psi_0 = 0`,
/// integrated by RK4 along the stored forward characteristics.
pub fn linearized_solve(traj: &Trajectory, u: &ControlPath, h: &ControlPath, kernels: &KernelPair) -> Result<VectorSeries> {
    linearized_solve_with(traj, u, h, kernels, None)
}

/// [`linearized_solve`] with the sign of one term optionally reversed (verification hook).
pub fn linearized_solve_with(
    traj: &Trajectory,
    u: &ControlPath,
    h: &ControlPath,
    kernels: &KernelPair,
    flip: Option<LinearizationTerm>,
) -> Result<VectorSeries> {
    let grid = *traj.grid();
    if u.grid() != &grid || h.grid() != &grid || u.agents() != h.agents() || u.dim() != traj.dim() || h.dim() != traj.dim() {
        return Err(Error::shape("linearized solve needs trajectory, control and perturbation on one grid"));
    }
    let d = traj.dim();
    let len = traj.particles() * d;
    let m = u.agents() * d;
    let dt = grid.dt();
    let (mut uh, mut hh) = (vec![0.0; m], vec![0.0; m]);
    let mut xh = vec![0.0; len];
    let (mut k1, mut k2, mut k3, mut k4, mut stage) = (vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    let mut psi = vec![0.0; len];
    let mut frames = Vec::with_capacity(grid.n_nodes());
    let mut rates = Vec::with_capacity(grid.n_nodes());
    linearized_rhs(traj.frame(0).positions(), &psi, u.node(0), h.node(0), d, kernels, flip, &mut k1);
    for k in 0..grid.n_steps() {
        frames.push(psi.clone());
        rates.push(k1.clone());
        let th = grid.node(k) + 0.5 * dt;
        u.eval_into(th, &mut uh);
        h.eval_into(th, &mut hh);
        traj.interval_positions(k, 0.5, &mut xh);
        for j in 0..len {
            stage[j] = psi[j] + 0.5 * dt * k1[j];
        }
        linearized_rhs(&xh, &stage, &uh, &hh, d, kernels, flip, &mut k2);
        for j in 0..len {
            stage[j] = psi[j] + 0.5 * dt * k2[j];
        }
        linearized_rhs(&xh, &stage, &uh, &hh, d, kernels, flip, &mut k3);
        for j in 0..len {
            stage[j] = psi[j] + dt * k3[j];
        }
        let next = traj.frame(k + 1).positions();
        linearized_rhs(next, &stage, u.node(k + 1), h.node(k + 1), d, kernels, flip, &mut k4);
        for j in 0..len {
            psi[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        linearized_rhs(next, &psi, u.node(k + 1), h.node(k + 1), d, kernels, flip, &mut k1);
        check_finite(&psi, "linearized state", k + 1)?;
    }
    frames.push(psi);
    rates.push(k1);
    VectorSeries::new(grid, traj.particles(), d, frames, rates)
}

/// `dJ(u)[h] = dJ2(u)[h] + int_0^T (1/N) sum_i delta_mu J1(mu_t)(x_t^i) . psi_t^i dt`,
/// the state-sensitivity form of the directional derivative.
pub fn linearized_cost_derivative(
    traj: &Trajectory,
    psi: &VectorSeries,
    u: &ControlPath,
    h: &ControlPath,
    cost: &CostSpec,
) -> Result<f64> {
    if !psi.aligned_with(traj) {
        return Err(Error::shape("linearized states are not aligned with the trajectory"));
    }
    let grid = traj.grid();
    let dt = grid.dt();
    let len = traj.particles() * traj.dim();
    let (mut x, mut p) = (vec![0.0; len], vec![0.0; len]);
    let mut running = 0.0;
    if !cost.running_is_zero() {
        for k in 0..grid.n_steps() {
            for &(s, w) in &GAUSS3 {
                traj.interval_positions(k, s, &mut x);
                psi.interval_values(k, s, &mut p);
                let delta = cost.delta_mu_j1_raw(&x);
                running += w * dt * dot(&delta, &p);
            }
        }
        running /= traj.particles() as f64;
    }
    Ok(cost.control_cost_derivative(u, h)? + running)
}

/// Constants of the Dobrushin-type estimate
/// `W2^2(mu_t, mu'_t) <= (W2^2(mu_0, mu'_0) + b int_0^t |u - u'|^2) e^{a t}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityConstants {
    /// One-sided Lipschitz constant of `x -> v(mu, u)(x)`.
    pub c_l: f64,
    /// Lipschitz constant of `v` in its measure and control arguments.
    pub c_v: f64,
    pub a: f64,
    pub b: f64,
}

pub fn stability_constants(kernels: &KernelPair, agents: usize) -> StabilityConstants {
    let k1 = kernels.interaction.bounds();
    let k2 = kernels.control.bounds();
    let m = agents as f64;
    let c_l = k1.one_sided + m * k2.one_sided;
    let c_v = k1.jacobian.max(m.sqrt() * k2.jacobian);
    StabilityConstants { c_l, c_v, a: 2.0 * c_l + 3.0 * c_v, b: c_v }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DobrushinRow {
    pub t: f64,
    /// `W2^2(mu_t, mu'_t)` by exact assignment.
    pub w2_sq: f64,
    pub bound: f64,
    pub satisfied: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DobrushinReport {
    pub constants: StabilityConstants,
    pub rows: Vec<DobrushinRow>,
}

impl DobrushinReport {
    pub fn all_satisfied(&self) -> bool {
        self.rows.iter().all(|r| r.satisfied)
    }
}

/// Evaluates the stability estimate at every node for two solutions with equal `N`.
pub fn dobrushin_gap(
    traj: &Trajectory,
    other: &Trajectory,
    u: &ControlPath,
    u_other: &ControlPath,
    kernels: &KernelPair,
) -> Result<DobrushinReport> {
    if traj.particles() != other.particles() {
        return Err(Error::shape(format!("particle counts differ: {} vs {}", traj.particles(), other.particles())));
    }
    if traj.grid() != other.grid() || u.grid() != traj.grid() || u_other.grid() != traj.grid() || u.agents() != u_other.agents() {
        return Err(Error::shape("dobrushin comparison needs matching grids and agent counts"));
    }
    let constants = stability_constants(kernels, u.agents());
    let w0 = w2_assignment(traj.frame(0).positions(), other.frame(0).positions(), traj.dim())?.distance.powi(2);
    let grid = traj.grid();
    let dt = grid.dt();
    let mut control_gap = 0.0;
    let mut rows = Vec::with_capacity(grid.n_nodes());
    for k in 0..grid.n_nodes() {
        if k > 0 {
            let (a0, b0, a1, b1) = (u.node(k - 1), u_other.node(k - 1), u.node(k), u_other.node(k));
            control_gap += (0..a0.len())
                .map(|j| {
                    let (p, q) = (a0[j] - b0[j], a1[j] - b1[j]);
                    dt / 3.0 * (p * p + p * q + q * q)
                })
                .sum::<f64>();
        }
        let t = grid.node(k);
        let w2_sq = w2_assignment(traj.frame(k).positions(), other.frame(k).positions(), traj.dim())?.distance.powi(2);
        let bound = (w0 + constants.b * control_gap) * (constants.a * t).exp();
        // allow for rounding in the assignment cost when both sides vanish
        let satisfied = w2_sq <= bound * (1.0 + 1e-12) + 1e-14;
        rows.push(DobrushinRow { t, w2_sq, bound, satisfied });
    }
    Ok(DobrushinReport { constants, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::model::{sample_initial_ensemble, InitialMeasure, SamplingMode, TimeGrid};

    fn kernels() -> KernelPair {
        KernelPair::new(KernelSpec::gaussian(-0.5, 1.0), KernelSpec::gaussian(0.5, 0.5))
    }

    fn cloud(n: usize, seed: u64) -> ParticleEnsemble {
        let m = InitialMeasure::UniformBox { lower: vec![-0.5, -0.5], upper: vec![0.5, 0.5] };
        sample_initial_ensemble(&m, n, seed, SamplingMode::Random).unwrap()
    }

    fn controls(grid: TimeGrid) -> ControlPath {
        let vals: Vec<f64> = grid
            .nodes()
            .flat_map(|t| [-1.0 + 0.8 * t, 0.4 + 0.3 * t * t, -1.0 + t, -0.4 - 0.2 * t])
            .collect();
        ControlPath::from_values(grid, 2, 2, vals).unwrap()
    }

    #[test]
    fn single_particle_without_controls_is_still() {
        let e = ParticleEnsemble::new(2, vec![0.3, -0.2]).unwrap();
        assert_eq!(velocity(&e, &[], &kernels()).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn two_particle_velocity_closed_form() {
        let k = KernelPair::new(KernelSpec::gaussian(1.0, 1.0), KernelSpec::Zero);
        let e = ParticleEnsemble::new(1, vec![-1.0, 1.0]).unwrap();
        let v = velocity(&e, &[], &k).unwrap();
        // K(-2) = 2 e^{-2}, so v_1 = -(1/2) K(-2) = -e^{-2}; v_2 mirrors it
        assert!((v[0] + (-2.0f64).exp()).abs() < 1e-16);
        assert!((v[1] - (-2.0f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn velocity_is_odd_under_mirroring() {
        let e = cloud(7, 3);
        let mirrored = ParticleEnsemble::new(2, e.positions().iter().map(|x| -x).collect()).unwrap();
        let u = [0.4, -0.1, -0.3, 0.8];
        let um: Vec<f64> = u.iter().map(|x| -x).collect();
        let v = velocity(&e, &u, &kernels()).unwrap();
        let vm = velocity(&mirrored, &um, &kernels()).unwrap();
        for (a, b) in v.iter().zip(&vm) {
            assert!((a + b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_kernels_freeze_the_cloud() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let e = cloud(5, 1);
        let traj = forward_solve(&e, &controls(g), &KernelPair::new(KernelSpec::Zero, KernelSpec::Zero)).unwrap();
        assert!(traj.frames().iter().all(|f| f == &e));
    }

    #[test]
    fn symmetric_pair_keeps_its_midpoint() {
        let g = TimeGrid::new(1.0, 50).unwrap();
        let k = KernelPair::new(KernelSpec::gaussian(-1.0, 1.0), KernelSpec::Zero);
        let e = ParticleEnsemble::new(2, vec![0.2, 0.7, 1.0, -0.1]).unwrap();
        let u = ControlPath::constant(g, 2, &[]).unwrap();
        let traj = forward_solve(&e, &u, &k).unwrap();
        for f in traj.frames() {
            let m = f.mean();
            assert!((m[0] - 0.6).abs() < 1e-12 && (m[1] - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_is_conserved_without_controls() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let e = cloud(40, 8);
        let u = ControlPath::constant(g, 2, &[]).unwrap();
        let traj = forward_solve(&e, &u, &kernels()).unwrap();
        let m0 = e.mean();
        for f in traj.frames() {
            let m = f.mean();
            assert!((m[0] - m0[0]).abs() < 1e-10 && (m[1] - m0[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let e = cloud(12, 2);
        let terminal = |n: usize| {
            let u = controls(TimeGrid::new(1.0, 10).unwrap()).resample(TimeGrid::new(1.0, n).unwrap()).unwrap();
            forward_solve(&e, &u, &kernels()).unwrap().terminal().positions().to_vec()
        };
        let (a, b, c) = (terminal(20), terminal(40), terminal(80));
        let err = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let order = (err(&a, &b) / err(&b, &c)).log2();
        assert!((order - 4.0).abs() < 0.2, "order {order}");
    }

    #[test]
    fn duplicated_cloud_gives_duplicated_trajectory() {
        let g = TimeGrid::new(1.0, 20).unwrap();
        let e = cloud(6, 5);
        let u = controls(g);
        let single = forward_solve(&e, &u, &kernels()).unwrap();
        let double = forward_solve(&e.duplicated(2), &u, &kernels()).unwrap();
        for (a, b) in single.frames().iter().zip(double.frames()) {
            for (i, p) in b.iter().enumerate() {
                let q = a.particle(i / 2);
                assert!(p.iter().zip(q).all(|(x, y)| (x - y).abs() < 1e-14));
            }
        }
    }

    #[test]
    fn zero_perturbation_gives_zero_linearization() {
        let g = TimeGrid::new(1.0, 20).unwrap();
        let u = controls(g);
        let traj = forward_solve(&cloud(8, 1), &u, &kernels()).unwrap();
        let psi = linearized_solve(&traj, &u, &u.zeros_like(), &kernels()).unwrap();
        assert_eq!(psi.sup_norm(), 0.0);
    }

    #[test]
    fn linearization_is_linear_in_the_perturbation() {
        let g = TimeGrid::new(1.0, 20).unwrap();
        let u = controls(g);
        let traj = forward_solve(&cloud(8, 1), &u, &kernels()).unwrap();
        let h1 = u.direction_from_fn(|t, l, a| (t * (1 + l + a) as f64).sin());
        let h2 = u.direction_from_fn(|t, l, a| t * t * (l as f64 - a as f64 + 0.5));
        let combo = u.zeros_like().step(2.0, &h1).unwrap().step(-3.0, &h2).unwrap();
        let p1 = linearized_solve(&traj, &u, &h1, &kernels()).unwrap();
        let p2 = linearized_solve(&traj, &u, &h2, &kernels()).unwrap();
        let pc = linearized_solve(&traj, &u, &combo, &kernels()).unwrap();
        for k in 0..g.n_nodes() {
            for j in 0..p1.frame(k).len() {
                let lin = 2.0 * p1.frame(k)[j] - 3.0 * p2.frame(k)[j];
                assert!((pc.frame(k)[j] - lin).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_inputs_have_zero_gap() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let u = controls(g);
        let traj = forward_solve(&cloud(8, 1), &u, &kernels()).unwrap();
        let report = dobrushin_gap(&traj, &traj, &u, &u, &kernels()).unwrap();
        assert!(report.all_satisfied());
        assert!(report.rows.iter().all(|r| r.w2_sq == 0.0 && r.bound >= 0.0));
    }

    #[test]
    fn dobrushin_rejects_unequal_sizes() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let u = controls(g);
        let a = forward_solve(&cloud(8, 1), &u, &kernels()).unwrap();
        let b = forward_solve(&cloud(9, 1), &u, &kernels()).unwrap();
        assert!(matches!(dobrushin_gap(&a, &b, &u, &u, &kernels()), Err(Error::Shape(_))));
    }

    #[test]
    fn stability_constants_from_bounds() {
        let c = stability_constants(&kernels(), 2);
        // K1 attractive: 0.5 * 2 e^{-3/2}; K2 repulsive: 0.5 / 0.25 per agent
        let c_l = 0.5 * 2.0 * (-1.5f64).exp() + 2.0 * 2.0;
        assert!((c.c_l - c_l).abs() < 1e-15);
        assert!((c.c_v - 2f64.sqrt() * 2.0).abs() < 1e-15);
        assert_eq!(c.a, 2.0 * c.c_l + 3.0 * c.c_v);
        assert_eq!(c.b, c.c_v);
    }
}
