//! Interaction forces `K : R^d -> R^d` with closed-form Jacobians and sup-norm bounds.
//!
//! The shipped family is the gradient of a Gaussian potential,
//! `K(x) = grad P(x)` with `P(x) = A exp(-|x|^2 / (2 sigma^2))`, so every kernel is odd,
//! has a symmetric Jacobian and is bounded together with its first two derivatives.
//!
//! Sign convention: particles move with `v = -K(x_i - y)` relative to a source at `y`,
//! i.e. they descend the potential `P`. A negative amplitude is a well (attraction),
//! a positive amplitude is a bump (repulsion).

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelSpec {
    Zero,
    /// Gradient of `amplitude * exp(-|x|^2 / (2 width^2))`.
    #[serde(alias = "gaussian-potential-gradient")]
    Gaussian { amplitude: f64, width: f64 },
}

/// Analytic (or rigorously over-estimated) sup norms of a kernel and its derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBounds {
    /// `sup_x |K(x)|`.
    pub value: f64,
    /// `sup_x ||DK(x)||` (spectral norm).
    pub jacobian: f64,
    /// Upper bound on `sup_x ||D^2 K(x)||` as a bilinear map.
    pub hessian: f64,
    /// `sup_x lambda_max(-DK(x))`, the one-sided growth the kernel contributes to `v`.
    pub one_sided: f64,
}

impl KernelSpec {
    pub fn gaussian(amplitude: f64, width: f64) -> Self {
        KernelSpec::Gaussian { amplitude, width }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            KernelSpec::Zero => true,
            KernelSpec::Gaussian { amplitude, .. } => *amplitude == 0.0,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        match self {
            KernelSpec::Zero => Ok(()),
            KernelSpec::Gaussian { amplitude, width } => {
                if !amplitude.is_finite() || !(width.is_finite() && *width > 0.0) {
                    Err(crate::Error::Config(format!("gaussian kernel needs finite amplitude and width > 0, got A={amplitude}, sigma={width}")))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Radial profile: `K(x) = c x` and `DK(x) w = c (w - x (x.w) / sigma^2)` with `(c, 1/sigma^2)`.
    #[inline]
    pub(crate) fn profile(&self, r2: f64) -> (f64, f64) {
        match *self {
            KernelSpec::Zero => (0.0, 0.0),
            KernelSpec::Gaussian { amplitude, width } => {
                let inv = 1.0 / (width * width);
                (-amplitude * inv * (-0.5 * r2 * inv).exp(), inv)
            }
        }
    }

    /// The potential `P` whose gradient is the kernel.
    pub fn potential(&self, x: &[f64]) -> f64 {
        match *self {
            KernelSpec::Zero => 0.0,
            KernelSpec::Gaussian { amplitude, width } => {
                amplitude * (-0.5 * dot(x, x) / (width * width)).exp()
            }
        }
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let (c, _) = self.profile(dot(x, x));
        for (o, xi) in out.iter_mut().zip(x) {
            *o = c * xi;
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.eval_into(x, &mut out);
        out
    }

    /// Row-major `d x d` Jacobian.
    pub fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let (c, inv) = self.profile(dot(x, x));
        let mut jac = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                let delta = if a == b { 1.0 } else { 0.0 };
                jac[a * d + b] = c * (delta - x[a] * x[b] * inv);
            }
        }
        jac
    }

    /// `out += scale * DK(x) w` without forming the matrix.
    #[inline]
    pub fn apply_jacobian_acc(&self, x: &[f64], w: &[f64], scale: f64, out: &mut [f64]) {
        let (c, inv) = self.profile(dot(x, x));
        let proj = dot(x, w) * inv;
        let cs = c * scale;
        for a in 0..x.len() {
            out[a] += cs * (w[a] - x[a] * proj);
        }
    }

    pub fn bounds(&self) -> KernelBounds {
        match *self {
            KernelSpec::Zero => KernelBounds { value: 0.0, jacobian: 0.0, hessian: 0.0, one_sided: 0.0 },
            KernelSpec::Gaussian { amplitude, width } => {
                let a = amplitude.abs();
                // |K| = |A| r / sigma^2 exp(-r^2 / 2 sigma^2), maximal at r = sigma.
                let value = a / width * (-0.5f64).exp();
                // Eigenvalues of DK are c and c (1 - r^2 / sigma^2); the largest modulus sits at the origin.
                let jacobian = a / (width * width);
                // |D^2 K| <= |A| / sigma^3 (s^3 + 3 s) exp(-s^2 / 2), maximised at s^4 = 3.
                let s = 3f64.powf(0.25);
                let hessian = a / width.powi(3) * (s.powi(3) + 3.0 * s) * (-0.5 * s * s).exp();
                let one_sided = if amplitude > 0.0 {
                    jacobian
                } else {
                    // (s^2 - 1) exp(-s^2 / 2) peaks at s^2 = 3.
                    jacobian * 2.0 * (-1.5f64).exp()
                };
                KernelBounds { value, jacobian, hessian, one_sided }
            }
        }
    }
}

/// Gaussian coefficients hoisted out of pair loops: `K(x) = pre exp(rate |x|^2) x`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Radial {
    pub pre: f64,
    pub rate: f64,
    /// `1 / sigma^2`.
    pub inv: f64,
}

impl Radial {
    #[inline(always)]
    pub fn coeff(&self, r2: f64) -> f64 {
        self.pre * (r2 * self.rate).exp()
    }
}

impl KernelSpec {
    /// `None` when the kernel vanishes identically.
    pub(crate) fn radial(&self) -> Option<Radial> {
        match *self {
            KernelSpec::Zero => None,
            KernelSpec::Gaussian { amplitude: 0.0, .. } => None,
            KernelSpec::Gaussian { amplitude, width } => {
                let inv = 1.0 / (width * width);
                Some(Radial { pre: -amplitude * inv, rate: -0.5 * inv, inv })
            }
        }
    }
}

/// The particle-particle kernel `K1` and the particle-control kernel `K2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelPair {
    pub interaction: KernelSpec,
    pub control: KernelSpec,
}

impl KernelPair {
    pub fn new(interaction: KernelSpec, control: KernelSpec) -> Self {
        Self { interaction, control }
    }

    pub fn validate(&self) -> crate::Result<()> {
        self.interaction.validate()?;
        self.control.validate()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
