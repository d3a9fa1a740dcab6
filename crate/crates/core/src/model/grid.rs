use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid `t_k = k * dt` on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::config(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps < 2 {
            return Err(Error::config(format!("need at least 2 time steps, got {n_steps}")));
        }
        Ok(Self { horizon, n_steps, dt: horizon / n_steps as f64 })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time of node `k`. The last node returns the horizon exactly.
    pub fn node(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|k| self.node(k))
    }

    /// Interval index and local coordinate `s in [0, 1]` for time `t`, clamped to the grid.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let pos = (t / self.dt).clamp(0.0, self.n_steps as f64);
        let k = (pos.floor() as usize).min(self.n_steps - 1);
        (k, pos - k as f64)
    }

    /// Same horizon with every step split in two.
    pub fn refined(&self) -> Self {
        Self { horizon: self.horizon, n_steps: 2 * self.n_steps, dt: self.horizon / (2 * self.n_steps) as f64 }
    }
}

/// Builds the uniform grid; fails on non-positive horizon or fewer than two steps.
pub fn build_time_grid(horizon: f64, n_steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, n_steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_grid() {
        let g = build_time_grid(1.0, 4).unwrap();
        let nodes: Vec<f64> = g.nodes().collect();
        assert_eq!(nodes, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn single_step_rejected() {
        assert!(matches!(build_time_grid(2.0, 1), Err(Error::Config(_))));
        assert!(build_time_grid(0.0, 10).is_err());
        assert!(build_time_grid(-1.0, 10).is_err());
    }

    #[test]
    fn fine_spacing() {
        let g = build_time_grid(0.5, 100).unwrap();
        assert!((g.dt() - 0.005).abs() < 1e-15);
        assert_eq!(g.node(100), 0.5);
        assert!((g.dt() * g.n_steps() as f64 - g.horizon()).abs() < 1e-14);
    }

    #[test]
    fn locate_clamps() {
        let g = build_time_grid(1.0, 4).unwrap();
        assert_eq!(g.locate(1.0), (3, 1.0));
        assert_eq!(g.locate(0.0), (0, 0.0));
        let (k, s) = g.locate(0.375);
        assert_eq!(k, 1);
        assert!((s - 0.5).abs() < 1e-12);
    }
}
