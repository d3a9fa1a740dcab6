use serde::{Deserialize, Serialize};

use super::grid::TimeGrid;
use crate::error::{Error, Result};

/// Node values of the `M` control agents, piecewise linear in time.
///
/// Storage is node-major: `values[(k * agents + l) * dim + a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    grid: TimeGrid,
    agents: usize,
    dim: usize,
    values: Vec<f64>,
}

impl ControlPath {
    pub fn from_values(grid: TimeGrid, agents: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("control dimension must be positive"));
        }
        if values.len() != grid.n_nodes() * agents * dim {
            return Err(Error::shape(format!(
                "control path needs {} values, got {}",
                grid.n_nodes() * agents * dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "control path", node: 0 });
        }
        Ok(Self { grid, agents, dim, values })
    }

    /// Every node holds the initial agent positions `initial` (length `M * d`).
    pub fn constant(grid: TimeGrid, dim: usize, initial: &[f64]) -> Result<Self> {
        if dim == 0 || !initial.len().is_multiple_of(dim) {
            return Err(Error::shape("initial control length is not a multiple of the dimension"));
        }
        let agents = initial.len() / dim;
        let values = initial.iter().copied().cycle().take(grid.n_nodes() * initial.len()).collect();
        Self::from_values(grid, agents, dim, values)
    }

    /// Zero path with the same shape, usable as a perturbation direction.
    pub fn zeros_like(&self) -> Self {
        Self { grid: self.grid, agents: self.agents, dim: self.dim, values: vec![0.0; self.values.len()] }
    }

    /// Build a perturbation direction from a closure `f(t, agent, axis)`; node 0 is forced to zero.
    pub fn direction_from_fn(&self, mut f: impl FnMut(f64, usize, usize) -> f64) -> Self {
        let mut out = self.zeros_like();
        for k in 1..self.grid.n_nodes() {
            let t = self.grid.node(k);
            for l in 0..self.agents {
                for a in 0..self.dim {
                    out.values[(k * self.agents + l) * self.dim + a] = f(t, l, a);
                }
            }
        }
        out
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn stride(&self) -> usize {
        self.agents * self.dim
    }

    /// All agent positions at node `k`.
    pub fn node(&self, k: usize) -> &[f64] {
        let s = self.stride();
        &self.values[k * s..(k + 1) * s]
    }

    pub fn initial(&self) -> &[f64] {
        self.node(0)
    }

    /// Linear interpolation at an arbitrary time in `[0, T]`, written into `out`.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let (k, s) = self.grid.locate(t);
        let a = self.node(k);
        let b = self.node(k + 1);
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o = x + s * (y - x);
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.stride()];
        self.eval_into(t, &mut out);
        out
    }

    /// Time derivative on interval `k` (constant there).
    pub fn slope(&self, k: usize) -> Vec<f64> {
        let dt = self.grid.dt();
        self.node(k + 1).iter().zip(self.node(k)).map(|(b, a)| (b - a) / dt).collect()
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.agents != other.agents || self.dim != other.dim {
            return Err(Error::shape("control paths differ in grid, agent count or dimension"));
        }
        Ok(())
    }

    /// `self + alpha * direction` with node 0 copied from `self` unchanged.
    pub fn step(&self, alpha: f64, direction: &Self) -> Result<Self> {
        self.check_same_shape(direction)?;
        let s = self.stride();
        let mut values = self.values.clone();
        for (v, d) in values[s..].iter_mut().zip(&direction.values[s..]) {
            *v += alpha * d;
        }
        Self::from_values(self.grid, self.agents, self.dim, values)
    }

    /// Squared `L^2(0,T)` distance, exact for piecewise-linear paths.
    pub fn l2_distance_sq(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        let diff: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(piecewise_linear_l2_sq(&self.grid, self.stride(), &diff))
    }

    /// Squared `L^2(0,T)` norm, exact for piecewise-linear paths.
    pub fn l2_norm_sq(&self) -> f64 {
        piecewise_linear_l2_sq(&self.grid, self.stride(), &self.values)
    }

    /// `sum_k dt |u'_k|^2`, the squared `H^1` seminorm.
    pub fn h1_seminorm_sq(&self) -> f64 {
        let dt = self.grid.dt();
        (0..self.grid.n_steps()).map(|k| self.slope(k).iter().map(|s| s * s).sum::<f64>() * dt).sum()
    }

    /// `sum_k dt u'_k . h'_k`, the `H^1` seminorm inner product.
    pub fn h1_inner(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        let dt = self.grid.dt();
        Ok((0..self.grid.n_steps())
            .map(|k| self.slope(k).iter().zip(other.slope(k)).map(|(a, b)| a * b).sum::<f64>() * dt)
            .sum())
    }

    /// Copy of this path resampled onto a finer or coarser grid with the same horizon.
    pub fn resample(&self, grid: TimeGrid) -> Result<Self> {
        if (grid.horizon() - self.grid.horizon()).abs() > 1e-12 * self.grid.horizon() {
            return Err(Error::shape("resampling requires the same horizon"));
        }
        let s = self.stride();
        let mut values = Vec::with_capacity(grid.n_nodes() * s);
        let mut buf = vec![0.0; s];
        for t in grid.nodes() {
            self.eval_into(t, &mut buf);
            values.extend_from_slice(&buf);
        }
        Self::from_values(grid, self.agents, self.dim, values)
    }
}

fn piecewise_linear_l2_sq(grid: &TimeGrid, stride: usize, values: &[f64]) -> f64 {
    let dt = grid.dt();
    (0..grid.n_steps())
        .map(|k| {
            let a = &values[k * stride..(k + 1) * stride];
            let b = &values[(k + 1) * stride..(k + 2) * stride];
            a.iter().zip(b).map(|(x, y)| x * x + x * y + y * y).sum::<f64>() * dt / 3.0
        })
        .sum()
}
