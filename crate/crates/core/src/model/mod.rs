//! Shared domain types: the time grid, control paths, particle clouds and stored trajectories.

mod control;
mod ensemble;
mod grid;
mod trajectory;

pub use control::ControlPath;
pub use ensemble::{sample_initial_ensemble, InitialMeasure, ParticleEnsemble, SamplingMode};
pub use grid::{build_time_grid, TimeGrid};
pub use trajectory::{AdjointTrajectory, Trajectory, VectorSeries};
pub(crate) use trajectory::hermite_into;
