//! Run configuration, read from TOML. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::kernels::{KernelPair, KernelSpec};
use crate::model::{sample_initial_ensemble, ControlPath, InitialMeasure, ParticleEnsemble, SamplingMode, TimeGrid};
use crate::optimize::{ControlProblem, OptimizerSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Solve,
    Check,
    Consistency,
    Rate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSettings {
    /// Fixed initial positions `u_0^l`, one row per agent. The descent starts from the
    /// constant path at these positions.
    pub initial: Vec<Vec<f64>>,
}

/// Settings read by the experiment harness; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    /// Particle counts of an `N`-sweep.
    pub sizes: Vec<usize>,
    /// Size of the reference cloud standing in for the mean-field limit.
    pub reference_particles: usize,
    /// Time steps used by the sweeps (defaults to the top-level `steps`).
    pub steps: Option<usize>,
    pub picard_tolerance: f64,
    pub picard_max_iterations: usize,
    /// Random `(u, h)` pairs used by the gradient checks.
    pub gradient_pairs: usize,
    /// Step of the fourth-order finite-difference reference derivatives along unit-scale directions.
    pub finite_difference_step: f64,
    /// Instance pairs in the stability check.
    pub stability_instances: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            sizes: vec![16, 32, 64, 128, 256],
            reference_particles: 2048,
            steps: None,
            picard_tolerance: 1e-10,
            picard_max_iterations: 200,
            gradient_pairs: 20,
            finite_difference_step: 2e-3,
            stability_instances: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dimension: usize,
    pub particles: usize,
    pub horizon: f64,
    pub steps: usize,
    pub seed: u64,
    #[serde(default = "default_experiment")]
    pub experiment: ExperimentKind,
    #[serde(default = "default_sampling")]
    pub sampling: SamplingMode,
    pub initial: InitialMeasure,
    pub controls: ControlSettings,
    pub kernels: KernelPair,
    pub cost: CostSpec,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    #[serde(default)]
    pub experiments: ExperimentSettings,
}

fn default_experiment() -> ExperimentKind {
    ExperimentKind::Solve
}

fn default_sampling() -> SamplingMode {
    SamplingMode::Random
}

impl RunConfig {
    /// The desk-scale steering instance: `d = 2`, `N = 64`, `M = 2`, `T = 1`, 100 steps,
    /// cohesive particles pushed by two repelling agents towards a target.
    pub fn steering() -> Self {
        Self {
            dimension: 2,
            particles: 64,
            horizon: 1.0,
            steps: 100,
            seed: 2024,
            experiment: ExperimentKind::Solve,
            sampling: SamplingMode::Random,
            initial: InitialMeasure::UniformBox { lower: vec![-0.5, -0.5], upper: vec![0.5, 0.5] },
            controls: ControlSettings { initial: vec![vec![-1.0, 0.4], vec![-1.0, -0.4]] },
            kernels: KernelPair::new(KernelSpec::gaussian(-0.5, 1.0), KernelSpec::gaussian(0.5, 0.5)),
            cost: CostSpec { target: vec![0.5, 0.0], mean_weight: 1.0, variance_weight: 1.0, regularization: 5.0 },
            optimizer: OptimizerSettings::default(),
            experiments: ExperimentSettings::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn agents(&self) -> usize {
        self.controls.initial.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 || self.particles == 0 {
            return Err(Error::config("dimension and particles must be positive"));
        }
        TimeGrid::new(self.horizon, self.steps)?;
        self.initial.validate()?;
        if self.initial.dim() != self.dimension {
            return Err(Error::config(format!("initial measure has dimension {}, expected {}", self.initial.dim(), self.dimension)));
        }
        if self.controls.initial.iter().any(|u| u.len() != self.dimension || u.iter().any(|v| !v.is_finite())) {
            return Err(Error::config("every initial control must be a finite vector of the state dimension"));
        }
        self.kernels.validate()?;
        self.cost.validate()?;
        if self.cost.dim() != self.dimension {
            return Err(Error::config("cost target dimension differs from the state dimension"));
        }
        self.optimizer.validate()?;
        let e = &self.experiments;
        if e.sizes.contains(&0) || e.reference_particles == 0 || e.steps == Some(0) {
            return Err(Error::config("experiment sizes and step counts must be positive"));
        }
        if e.picard_tolerance.is_nan() || e.picard_tolerance <= 0.0 || e.finite_difference_step.is_nan() || e.finite_difference_step <= 0.0 {
            return Err(Error::config("experiment tolerances must be positive"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.steps)
    }

    pub fn initial_ensemble(&self) -> Result<ParticleEnsemble> {
        sample_initial_ensemble(&self.initial, self.particles, self.seed, self.sampling)
    }

    /// Constant control at the configured initial positions on `grid`.
    pub fn initial_control(&self, grid: TimeGrid) -> Result<ControlPath> {
        let flat: Vec<f64> = self.controls.initial.iter().flatten().copied().collect();
        ControlPath::constant(grid, self.dimension, &flat)
    }

    pub fn problem(&self) -> Result<ControlProblem> {
        Ok(ControlProblem { initial: self.initial_ensemble()?, kernels: self.kernels, cost: self.cost.clone() })
    }

    /// Copy with `particles` and the seed-independent parts unchanged.
    pub fn with_particles(&self, particles: usize) -> Self {
        Self { particles, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steering_round_trips_through_toml() {
        let cfg = RunConfig::steering();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = RunConfig::steering().to_toml_string().unwrap();
        text = text.replacen("seed =", "colour = 3\nseed =", 1);
        assert!(matches!(RunConfig::from_toml_str(&text), Err(Error::Config(_))));
        let text = RunConfig::steering().to_toml_string().unwrap().replace("mean_weight", "mean_wieght");
        assert!(matches!(RunConfig::from_toml_str(&text), Err(Error::Config(_))));
    }

    #[test]
    fn non_positive_regularization_is_rejected() {
        let mut cfg = RunConfig::steering();
        cfg.cost.regularization = 0.0;
        let text = cfg.to_toml_string().unwrap();
        assert!(RunConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn degenerate_sizes_are_legal() {
        let mut cfg = RunConfig::steering();
        cfg.particles = 1;
        cfg.controls.initial.clear();
        cfg.validate().unwrap();
        let u = cfg.initial_control(cfg.grid().unwrap()).unwrap();
        assert_eq!(u.agents(), 0);
    }

    proptest::proptest! {
        #[test]
        fn arbitrary_configs_round_trip(
            particles in 1usize..5000,
            steps in 2usize..1000,
            seed in proptest::num::u64::ANY,
            horizon in 0.01f64..100.0,
            amplitude in -10.0f64..10.0,
            target in proptest::collection::vec(-5.0f64..5.0, 2),
            step in 1e-3f64..2.0,
            sizes in proptest::collection::vec(1usize..4096, 0..6),
        ) {
            let mut cfg = RunConfig::steering();
            cfg.particles = particles;
            cfg.steps = steps;
            cfg.seed = seed;
            cfg.horizon = horizon;
            cfg.kernels.interaction = KernelSpec::gaussian(amplitude, 0.7);
            cfg.cost.target = target;
            cfg.optimizer.initial_step = step;
            cfg.experiments.sizes = sizes;
            cfg.experiments.steps = Some(steps);
            let text = cfg.to_toml_string().unwrap();
            proptest::prop_assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        }
    }
}
