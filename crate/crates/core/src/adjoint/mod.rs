//! Adjoint formulations: the backward particle ODE, the Picard fixed point along
//! characteristics, the scalar adjoint in one dimension, and phase-space diagnostics.
//!
//! Particle adjoint, with `xi_T = 0`:
//! `dxi^i/dt = (1/N) sum_j DK1(x^i - x^j)(xi^i - xi^j) + sum_l DK2(x^i - u^l) xi^i + delta_mu J1(x^i)`.

mod backward;
mod l2;
mod phase_space;
mod picard;

pub use backward::{adjoint_solve_backward, adjoint_solve_with_tracers};
pub use l2::{gradient_relation_residual, l2_adjoint_solve_1d, ScalarAdjoint};
pub use phase_space::{hamiltonian, phase_space_diagnostics, PhaseSpaceCloud, PhaseSpaceReport, TestFunction, WeakFormRow};
pub use picard::{adjoint_solve_picard, adjoint_solve_picard_split, PicardSolution};

use crate::costs::CostSpec;
use crate::dynamics::for_each_particle;
use crate::kernels::KernelPair;

/// Right-hand side `Psi` of the adjoint equation for raw positions, adjoints, controls
/// and a precomputed `delta_mu J1` at the particles.
pub(crate) fn adjoint_rhs(x: &[f64], xi: &[f64], u: &[f64], delta: &[f64], d: usize, kernels: &KernelPair, out: &mut [f64]) {
    field_adjoint_rhs(x, xi, x, xi, u, delta, d, kernels, out);
}

/// `Psi` at target pairs `(y, eta)` in the field of the cloud `(x, xi)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn field_adjoint_rhs(
    y: &[f64],
    eta: &[f64],
    x: &[f64],
    xi: &[f64],
    u: &[f64],
    delta: &[f64],
    d: usize,
    kernels: &KernelPair,
    out: &mut [f64],
) {
    match d {
        1 => adjoint_rhs_fixed::<1>(y, eta, x, xi, u, delta, kernels, out),
        2 => adjoint_rhs_fixed::<2>(y, eta, x, xi, u, delta, kernels, out),
        3 => adjoint_rhs_fixed::<3>(y, eta, x, xi, u, delta, kernels, out),
        _ => adjoint_rhs_any(y, eta, x, xi, u, delta, d, kernels, out),
    }
}

#[allow(clippy::too_many_arguments)]
fn adjoint_rhs_fixed<const D: usize>(
    y: &[f64],
    eta: &[f64],
    x: &[f64],
    xi: &[f64],
    u: &[f64],
    delta: &[f64],
    kernels: &KernelPair,
    out: &mut [f64],
) {
    let n = x.len() / D;
    let inv_n = 1.0 / n as f64;
    let k1 = kernels.interaction.radial();
    let k2 = kernels.control.radial();
    for_each_particle(out, D, |i, o| {
        let mut pos = [0.0; D];
        let mut mom = [0.0; D];
        pos.copy_from_slice(&y[i * D..(i + 1) * D]);
        mom.copy_from_slice(&eta[i * D..(i + 1) * D]);
        let mut acc = [0.0; D];
        if let Some(k) = k1 {
            for (xj, pj) in x.chunks_exact(D).zip(xi.chunks_exact(D)) {
                let (mut diff, mut rel) = ([0.0; D], [0.0; D]);
                let (mut r2, mut proj) = (0.0, 0.0);
                for a in 0..D {
                    diff[a] = pos[a] - xj[a];
                    rel[a] = mom[a] - pj[a];
                    r2 += diff[a] * diff[a];
                    proj += diff[a] * rel[a];
                }
                let c = k.coeff(r2);
                proj *= k.inv;
                for a in 0..D {
                    acc[a] += c * (rel[a] - diff[a] * proj);
                }
            }
            for a in acc.iter_mut() {
                *a *= inv_n;
            }
        }
        if let Some(k) = k2 {
            for ul in u.chunks_exact(D) {
                let mut diff = [0.0; D];
                let (mut r2, mut proj) = (0.0, 0.0);
                for a in 0..D {
                    diff[a] = pos[a] - ul[a];
                    r2 += diff[a] * diff[a];
                    proj += diff[a] * mom[a];
                }
                let c = k.coeff(r2);
                proj *= k.inv;
                for a in 0..D {
                    acc[a] += c * (mom[a] - diff[a] * proj);
                }
            }
        }
        for a in 0..D {
            o[a] = acc[a] + delta[i * D + a];
        }
    });
}

#[allow(clippy::too_many_arguments)]
fn adjoint_rhs_any(y: &[f64], eta: &[f64], x: &[f64], xi: &[f64], u: &[f64], delta: &[f64], d: usize, kernels: &KernelPair, out: &mut [f64]) {
    let n = x.len() / d;
    let inv_n = 1.0 / n as f64;
    for_each_particle(out, d, |i, o| {
        o.copy_from_slice(&delta[i * d..(i + 1) * d]);
        let xi_pos = &y[i * d..(i + 1) * d];
        let xi_i = &eta[i * d..(i + 1) * d];
        let mut diff = vec![0.0; d];
        let mut rel = vec![0.0; d];
        for j in 0..n {
            for a in 0..d {
                diff[a] = xi_pos[a] - x[j * d + a];
                rel[a] = xi_i[a] - xi[j * d + a];
            }
            kernels.interaction.apply_jacobian_acc(&diff, &rel, inv_n, o);
        }
        for ul in u.chunks_exact(d) {
            for a in 0..d {
                diff[a] = xi_pos[a] - ul[a];
            }
            kernels.control.apply_jacobian_acc(&diff, xi_i, 1.0, o);
        }
    });
}

/// Constant `C_xi` with `sup_t (1/N) sum_i |xi_t^i|^2 <= C_xi` for every `N`, valid whenever
/// the initial cloud lies in the ball of radius `initial_radius`.
///
/// Particles stay within `R = R0 + (sup|K1| + M sup|K2|) T`, where `|delta_mu J1| <= sqrt(S)`;
/// Gronwall backward from `xi_T = 0` gives `S (e^{cT} - 1) / c`.
pub fn uniform_adjoint_bound(kernels: &KernelPair, cost: &CostSpec, agents: usize, initial_radius: f64, horizon: f64) -> f64 {
    let k1 = kernels.interaction.bounds();
    let k2 = kernels.control.bounds();
    let m = agents as f64;
    let radius = initial_radius + (k1.value + m * k2.value) * horizon;
    let s = cost.delta_sup_bound(radius).powi(2);
    let c = 2.0 * (k1.jacobian + m * k2.jacobian) + 2.0 * k1.jacobian + 1.0;
    s * ((c * horizon).exp() - 1.0) / c
}
