use super::adjoint_rhs;
use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::kernels::KernelPair;
use crate::model::{hermite_into, AdjointTrajectory, ControlPath, Trajectory, VectorSeries};
use crate::quadrature::GAUSS3;

/// Fixed point of `xi_t = p - int_t^{t_end} Psi[xi]_s ds` along the stored characteristics,
/// with the iteration log.
#[derive(Clone, Debug, PartialEq)]
pub struct PicardSolution {
    pub adjoint: AdjointTrajectory,
    /// Total number of sweeps over all segments.
    pub iterations: usize,
    /// Sup-norm change of every sweep, in execution order (latest segment first).
    pub changes: Vec<f64>,
    /// Number of time segments the horizon was split into.
    pub segments: usize,
}

struct Context<'a> {
    traj: &'a Trajectory,
    u: &'a ControlPath,
    kernels: &'a KernelPair,
    deltas: Vec<Vec<f64>>,
    /// States, controls and cost sources at the Gauss points of every interval.
    inner: Vec<[Stage; 3]>,
    d: usize,
}

#[derive(Default)]
struct Stage {
    x: Vec<f64>,
    u: Vec<f64>,
    delta: Vec<f64>,
}

impl Context<'_> {
    fn psi(&self, k: usize, xi: &[f64], out: &mut [f64]) {
        adjoint_rhs(self.traj.frame(k).positions(), xi, self.u.node(k), &self.deltas[k], self.d, self.kernels, out);
    }
}

fn context<'a>(traj: &'a Trajectory, u: &'a ControlPath, kernels: &'a KernelPair, cost: &CostSpec) -> Result<Context<'a>> {
    if u.grid() != traj.grid() || u.dim() != traj.dim() || cost.dim() != traj.dim() {
        return Err(Error::shape("picard solve needs trajectory, control and cost of one shape"));
    }
    let grid = traj.grid();
    let deltas = traj.frames().iter().map(|f| cost.delta_mu_j1_raw(f.positions())).collect();
    let len = traj.particles() * traj.dim();
    let inner = (0..grid.n_steps())
        .map(|k| {
            GAUSS3.map(|(s, _)| {
                let mut x = vec![0.0; len];
                traj.interval_positions(k, s, &mut x);
                let delta = cost.delta_mu_j1_raw(&x);
                Stage { x, u: u.eval(grid.node(k) + s * grid.dt()), delta }
            })
        })
        .collect();
    Ok(Context { traj, u, kernels, deltas, inner, d: traj.dim() })
}

/// Iterates on nodes `a..=b` with `xi_b = terminal`, writing into `frames[a..=b]`.
#[allow(clippy::too_many_arguments)]
fn solve_segment(
    ctx: &Context,
    a: usize,
    b: usize,
    terminal: &[f64],
    tol: f64,
    max_iter: usize,
    frames: &mut [Vec<f64>],
    changes: &mut Vec<f64>,
) -> Result<usize> {
    let len = terminal.len();
    let dt = ctx.traj.grid().dt();
    let n_seg = b - a;
    for f in frames[a..=b].iter_mut() {
        f.clear();
        f.extend_from_slice(terminal);
    }
    let mut rhs = vec![vec![0.0; len]; n_seg + 1];
    let mut next = vec![0.0; len];
    let mut acc = vec![0.0; len];
    let (mut xi, mut r) = (vec![0.0; len], vec![0.0; len]);
    let mut last_change = f64::INFINITY;
    for iter in 1..=max_iter {
        for (m, r) in rhs.iter_mut().enumerate() {
            ctx.psi(a + m, &frames[a + m], r);
        }
        // Gauss quadrature on every interval, with the previous iterate interpolated by
        // Hermite from its node values and node rates.
        let mut integrals = vec![vec![0.0; len]; n_seg];
        for (m, out) in integrals.iter_mut().enumerate() {
            for (g, &(s, w)) in GAUSS3.iter().enumerate() {
                hermite_into(&frames[a + m], &rhs[m], &frames[a + m + 1], &rhs[m + 1], dt, s, &mut xi);
                let st = &ctx.inner[a + m][g];
                adjoint_rhs(&st.x, &xi, &st.u, &st.delta, ctx.d, ctx.kernels, &mut r);
                for j in 0..len {
                    out[j] += dt * w * r[j];
                }
            }
        }
        acc.iter_mut().for_each(|v| *v = 0.0);
        let mut change: f64 = 0.0;
        for m in (0..n_seg).rev() {
            for j in 0..len {
                acc[j] += integrals[m][j];
                next[j] = terminal[j] - acc[j];
            }
            let cur = &mut frames[a + m];
            for j in 0..len {
                change = change.max((next[j] - cur[j]).abs());
            }
            cur.copy_from_slice(&next);
        }
        if !change.is_finite() {
            return Err(Error::NonFinite { context: "picard adjoint", node: a });
        }
        changes.push(change);
        last_change = change;
        if change < tol {
            return Ok(iter);
        }
    }
    Err(Error::NotConverged { iterations: max_iter, last_change })
}

fn finish(ctx: &Context, frames: Vec<Vec<f64>>, iterations: usize, changes: Vec<f64>, segments: usize) -> Result<PicardSolution> {
    let len = ctx.traj.particles() * ctx.d;
    let rates = (0..frames.len())
        .map(|k| {
            let mut r = vec![0.0; len];
            ctx.psi(k, &frames[k], &mut r);
            r
        })
        .collect();
    let adjoint = VectorSeries::new(*ctx.traj.grid(), ctx.traj.particles(), ctx.d, frames, rates)?;
    Ok(PicardSolution { adjoint, iterations, changes, segments })
}

/// Picard iteration on the whole horizon with zero terminal payoff.
/// Interval integrals use three-point Gauss with Hermite-interpolated states and iterates.
pub fn adjoint_solve_picard(
    traj: &Trajectory,
    u: &ControlPath,
    kernels: &KernelPair,
    cost: &CostSpec,
    tol: f64,
    max_iter: usize,
) -> Result<PicardSolution> {
    let ctx = context(traj, u, kernels, cost)?;
    let n = traj.grid().n_steps();
    let len = traj.particles() * ctx.d;
    let mut frames = vec![Vec::new(); n + 1];
    let mut changes = Vec::new();
    let iterations = solve_segment(&ctx, 0, n, &vec![0.0; len], tol, max_iter, &mut frames, &mut changes)?;
    frames[n] = vec![0.0; len];
    finish(&ctx, frames, iterations, changes, 1)
}

/// Like [`adjoint_solve_picard`], but a segment that fails to converge is halved and solved
/// backward piece by piece, the later piece supplying the terminal value of the earlier one.
pub fn adjoint_solve_picard_split(
    traj: &Trajectory,
    u: &ControlPath,
    kernels: &KernelPair,
    cost: &CostSpec,
    tol: f64,
    max_iter: usize,
) -> Result<PicardSolution> {
    let ctx = context(traj, u, kernels, cost)?;
    let n = traj.grid().n_steps();
    let len = traj.particles() * ctx.d;
    let mut frames = vec![Vec::new(); n + 1];
    let mut changes = Vec::new();
    let mut iterations = 0;
    let mut segments = 0;
    split(&ctx, 0, n, vec![0.0; len], tol, max_iter, &mut frames, &mut changes, &mut iterations, &mut segments)?;
    frames[n] = vec![0.0; len];
    finish(&ctx, frames, iterations, changes, segments)
}

#[allow(clippy::too_many_arguments)]
fn split(
    ctx: &Context,
    a: usize,
    b: usize,
    terminal: Vec<f64>,
    tol: f64,
    max_iter: usize,
    frames: &mut [Vec<f64>],
    changes: &mut Vec<f64>,
    iterations: &mut usize,
    segments: &mut usize,
) -> Result<()> {
    let before = changes.len();
    match solve_segment(ctx, a, b, &terminal, tol, max_iter, frames, changes) {
        Ok(it) => {
            *iterations += it;
            *segments += 1;
            Ok(())
        }
        Err(Error::NotConverged { .. }) if b - a >= 4 => {
            *iterations += changes.len() - before;
            changes.truncate(before);
            let mid = a + (b - a) / 2;
            split(ctx, mid, b, terminal, tol, max_iter, frames, changes, iterations, segments)?;
            let p = frames[mid].clone();
            split(ctx, a, mid, p, tol, max_iter, frames, changes, iterations, segments)
        }
        Err(e) => Err(e),
    }
}
