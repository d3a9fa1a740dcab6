use super::ensemble::ParticleEnsemble;
use super::grid::TimeGrid;
use crate::error::{Error, Result};

/// Cubic Hermite interpolation on one interval of length `h`, local coordinate `s in [0, 1]`.
pub(crate) fn hermite_into(y0: &[f64], m0: &[f64], y1: &[f64], m1: &[f64], h: f64, s: f64, out: &mut [f64]) {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = (s3 - 2.0 * s2 + s) * h;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = (s3 - s2) * h;
    for (i, o) in out.iter_mut().enumerate() {
        *o = h00 * y0[i] + h10 * m0[i] + h01 * y1[i] + h11 * m1[i];
    }
}

/// Node values plus time derivatives at the nodes, interpolated by cubic Hermite in between.
fn interpolate(grid: &TimeGrid, values: &[&[f64]], rates: &[Vec<f64>], t: f64, out: &mut [f64]) {
    let (k, s) = grid.locate(t);
    if s == 0.0 {
        out.copy_from_slice(values[k]);
    } else if s == 1.0 {
        out.copy_from_slice(values[k + 1]);
    } else {
        hermite_into(values[k], &rates[k], values[k + 1], &rates[k + 1], grid.dt(), s, out);
    }
}

/// Forward particle states at every grid node together with the velocity field
/// evaluated at each node (used for Hermite interpolation and endpoint quadrature corrections).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    frames: Vec<ParticleEnsemble>,
    velocities: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, frames: Vec<ParticleEnsemble>, velocities: Vec<Vec<f64>>) -> Result<Self> {
        if frames.len() != grid.n_nodes() || velocities.len() != grid.n_nodes() {
            return Err(Error::shape(format!(
                "trajectory needs {} frames and velocities, got {} and {}",
                grid.n_nodes(),
                frames.len(),
                velocities.len()
            )));
        }
        let (n, d) = (frames[0].len(), frames[0].dim());
        if frames.iter().any(|f| f.len() != n || f.dim() != d) || velocities.iter().any(|v| v.len() != n * d) {
            return Err(Error::shape("trajectory frames must share particle count and dimension"));
        }
        Ok(Self { grid, frames, velocities })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn frames(&self) -> &[ParticleEnsemble] {
        &self.frames
    }

    pub fn frame(&self, k: usize) -> &ParticleEnsemble {
        &self.frames[k]
    }

    pub fn velocities(&self) -> &[Vec<f64>] {
        &self.velocities
    }

    pub fn velocity(&self, k: usize) -> &[f64] {
        &self.velocities[k]
    }

    pub fn particles(&self) -> usize {
        self.frames[0].len()
    }

    pub fn dim(&self) -> usize {
        self.frames[0].dim()
    }

    pub fn initial(&self) -> &ParticleEnsemble {
        &self.frames[0]
    }

    pub fn terminal(&self) -> &ParticleEnsemble {
        &self.frames[self.grid.n_steps()]
    }

    /// Positions at an off-node time by cubic Hermite interpolation of the stored frames.
    pub fn positions_at_into(&self, t: f64, out: &mut [f64]) {
        let values: Vec<&[f64]> = self.frames.iter().map(|f| f.positions()).collect();
        interpolate(&self.grid, &values, &self.velocities, t, out);
    }

    pub fn positions_at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.particles() * self.dim()];
        self.positions_at_into(t, &mut out);
        out
    }

    pub(crate) fn interval_positions(&self, k: usize, s: f64, out: &mut [f64]) {
        hermite_into(
            self.frames[k].positions(),
            &self.velocities[k],
            self.frames[k + 1].positions(),
            &self.velocities[k + 1],
            self.grid.dt(),
            s,
            out,
        );
    }
}

/// Per-particle vector series on the grid (adjoint velocities or linearized states)
/// with the right-hand side of their ODE stored at every node.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorSeries {
    grid: TimeGrid,
    particles: usize,
    dim: usize,
    frames: Vec<Vec<f64>>,
    rates: Vec<Vec<f64>>,
}

impl VectorSeries {
    pub fn new(grid: TimeGrid, particles: usize, dim: usize, frames: Vec<Vec<f64>>, rates: Vec<Vec<f64>>) -> Result<Self> {
        if frames.len() != grid.n_nodes() || rates.len() != grid.n_nodes() {
            return Err(Error::shape("series needs one frame and one rate per node"));
        }
        if frames.iter().chain(&rates).any(|f| f.len() != particles * dim) {
            return Err(Error::shape("series frames must hold particles * dim entries"));
        }
        Ok(Self { grid, particles, dim, frames, rates })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        &self.frames[k]
    }

    pub fn rates(&self) -> &[Vec<f64>] {
        &self.rates
    }

    pub fn rate(&self, k: usize) -> &[f64] {
        &self.rates[k]
    }

    pub fn value(&self, k: usize, i: usize) -> &[f64] {
        &self.frames[k][i * self.dim..(i + 1) * self.dim]
    }

    pub fn at_into(&self, t: f64, out: &mut [f64]) {
        let values: Vec<&[f64]> = self.frames.iter().map(|f| f.as_slice()).collect();
        interpolate(&self.grid, &values, &self.rates, t, out);
    }

    pub(crate) fn interval_values(&self, k: usize, s: f64, out: &mut [f64]) {
        hermite_into(&self.frames[k], &self.rates[k], &self.frames[k + 1], &self.rates[k + 1], self.grid.dt(), s, out);
    }

    /// `max_{k,i,a} |self - other|`.
    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        if self.grid != other.grid || self.particles != other.particles || self.dim != other.dim {
            return Err(Error::shape("series shapes differ"));
        }
        Ok(self
            .frames
            .iter()
            .zip(&other.frames)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max))
    }

    pub fn sup_norm(&self) -> f64 {
        self.frames.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `(1/N) sum_i |value_i|^2` at node `k`.
    pub fn mean_square(&self, k: usize) -> f64 {
        self.frames[k].iter().map(|x| x * x).sum::<f64>() / self.particles as f64
    }

    /// Whether this series matches the particle count, dimension and grid of `traj`.
    pub fn aligned_with(&self, traj: &Trajectory) -> bool {
        self.grid == *traj.grid() && self.particles == traj.particles() && self.dim == traj.dim()
    }
}

/// Adjoint velocities `xi_k^i`; the terminal frame is identically zero.
pub type AdjointTrajectory = VectorSeries;
