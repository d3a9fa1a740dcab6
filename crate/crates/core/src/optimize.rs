//! Armijo-backtracking gradient descent on the reduced cost of the particle control problem.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::adjoint::adjoint_solve_backward;
use crate::costs::{total_cost, CostSpec};
use crate::dynamics::forward_solve;
use crate::error::{Error, Result};
use crate::gradient::{reduced_gradient, GradientReport};
use crate::kernels::KernelPair;
use crate::model::{AdjointTrajectory, ControlPath, ParticleEnsemble, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchDirection {
    /// Negative `H1` Riesz representer (default).
    Sobolev,
    /// Negative lumped-`L2` gradient.
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    /// Stop once the gradient norm of the chosen representation is at most this.
    pub tolerance: f64,
    pub armijo_c1: f64,
    pub shrink: f64,
    /// First trial step. Along the Sobolev direction it is divided by the regularization
    /// weight, the curvature of `J2` in that metric; the recorded step is the effective one.
    pub initial_step: f64,
    pub max_shrinks: usize,
    pub direction: SearchDirection,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-6,
            armijo_c1: 1e-4,
            shrink: 0.5,
            initial_step: 1.0,
            max_shrinks: 40,
            direction: SearchDirection::Sobolev,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(Error::config("optimizer tolerance must be finite and non-negative"));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return Err(Error::config("armijo_c1 must lie in (0, 1)"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::config("shrink must lie in (0, 1)"));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::config("initial_step must be positive"));
        }
        Ok(())
    }
}

/// Everything that defines `(P_N)` apart from the control.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlProblem {
    pub initial: ParticleEnsemble,
    pub kernels: KernelPair,
    pub cost: CostSpec,
}

/// Cost, states and gradient at one control.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub control: ControlPath,
    pub trajectory: Trajectory,
    pub adjoint: AdjointTrajectory,
    pub cost: f64,
    pub gradient: GradientReport,
}

impl ControlProblem {
    /// Reduced cost `u -> J(x(u), u)`.
    pub fn reduced_cost(&self, u: &ControlPath) -> Result<f64> {
        let traj = forward_solve(&self.initial, u, &self.kernels)?;
        total_cost(&traj, u, &self.cost)
    }

    /// One forward-backward sweep.
    pub fn evaluate(&self, u: &ControlPath) -> Result<Evaluation> {
        let trajectory = forward_solve(&self.initial, u, &self.kernels)?;
        let cost = total_cost(&trajectory, u, &self.cost)?;
        let adjoint = adjoint_solve_backward(&trajectory, u, &self.kernels, &self.cost)?;
        let gradient = reduced_gradient(&trajectory, &adjoint, u, &self.kernels, &self.cost)?;
        Ok(Evaluation { control: u.clone(), trajectory, adjoint, cost, gradient })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    /// Step that produced this iterate (0 for the starting point).
    pub step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizeStatus {
    Converged,
    MaxIterations,
    /// No acceptable step after the configured number of shrinks; the best iterate is returned.
    LineSearchFailed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub solution: Evaluation,
    pub history: Vec<IterationRecord>,
    pub status: OptimizeStatus,
}

impl OptimizeResult {
    pub fn grad_norm(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.grad_norm)
    }
}

fn norm_of(eval: &Evaluation, direction: SearchDirection) -> f64 {
    match direction {
        SearchDirection::Sobolev => eval.gradient.h1_norm,
        SearchDirection::L2 => eval.gradient.l2_norm,
    }
}

/// Descent from `start`, keeping `u_0` fixed: every direction vanishes at node 0.
pub fn optimize(problem: &ControlProblem, start: &ControlPath, settings: &OptimizerSettings) -> Result<OptimizeResult> {
    settings.validate()?;
    let mut current = problem.evaluate(start)?;
    let mut history = vec![IterationRecord { iter: 0, cost: current.cost, grad_norm: norm_of(&current, settings.direction), step: 0.0 }];
    let mut status = OptimizeStatus::MaxIterations;
    for iter in 1..=settings.max_iterations + 1 {
        if norm_of(&current, settings.direction) <= settings.tolerance {
            status = OptimizeStatus::Converged;
            break;
        }
        if iter > settings.max_iterations {
            break;
        }
        let descent = match settings.direction {
            SearchDirection::Sobolev => &current.gradient.h1,
            SearchDirection::L2 => &current.gradient.l2,
        };
        let slope = -current.gradient.directional(descent)?;
        if slope >= 0.0 {
            status = OptimizeStatus::LineSearchFailed;
            break;
        }
        let mut alpha = match settings.direction {
            SearchDirection::Sobolev => settings.initial_step / problem.cost.regularization,
            SearchDirection::L2 => settings.initial_step,
        };
        let mut accepted = None;
        for _ in 0..=settings.max_shrinks {
            let trial = current.control.step(-alpha, descent)?;
            let cost = match problem.reduced_cost(&trial) {
                Ok(c) if c.is_finite() => c,
                Ok(_) | Err(Error::NonFinite { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            if cost <= current.cost + settings.armijo_c1 * alpha * slope {
                accepted = Some(trial);
                break;
            }
            alpha *= settings.shrink;
        }
        let Some(next) = accepted else {
            status = OptimizeStatus::LineSearchFailed;
            break;
        };
        current = problem.evaluate(&next)?;
        history.push(IterationRecord { iter, cost: current.cost, grad_norm: norm_of(&current, settings.direction), step: alpha });
    }
    Ok(OptimizeResult { solution: current, history, status })
}

/// `iter,cost,grad_norm,step` rows.
pub fn write_history_csv<W: Write>(history: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `t,agent,axis,value` rows of a control path.
pub fn write_control_csv<W: Write>(u: &ControlPath, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "agent", "axis", "value"])?;
    for k in 0..u.grid().n_nodes() {
        let t = u.grid().node(k);
        for (j, v) in u.node(k).iter().enumerate() {
            w.write_record([format!("{t}"), (j / u.dim()).to_string(), (j % u.dim()).to_string(), format!("{v:e}")])?;
        }
    }
    w.flush()?;
    Ok(())
}
