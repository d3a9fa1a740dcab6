use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equal-weight particle cloud; its empirical measure puts mass `1/N` on each position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    dim: usize,
    positions: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(dim: usize, positions: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dimension must be positive"));
        }
        if positions.is_empty() || !positions.len().is_multiple_of(dim) {
            return Err(Error::shape(format!(
                "{} coordinates do not form a non-empty cloud in dimension {dim}",
                positions.len()
            )));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { context: "particle ensemble", node: 0 });
        }
        Ok(Self { dim, positions })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.positions.chunks_exact(self.dim)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.iter() {
            for (mi, pi) in m.iter_mut().zip(p) {
                *mi += pi;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Second moment `(1/N) sum |x^i|^2`.
    pub fn second_moment(&self) -> f64 {
        self.positions.iter().map(|x| x * x).sum::<f64>() / self.len() as f64
    }

    pub fn max_radius(&self) -> f64 {
        self.iter().map(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    /// First `n` particles.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::shape(format!("prefix of {n} from a cloud of {}", self.len())));
        }
        Self::new(self.dim, self.positions[..n * self.dim].to_vec())
    }

    /// Every particle repeated `times` times; the empirical measure is unchanged.
    pub fn duplicated(&self, times: usize) -> Self {
        let mut positions = Vec::with_capacity(self.positions.len() * times);
        for p in self.iter() {
            for _ in 0..times {
                positions.extend_from_slice(p);
            }
        }
        Self { dim: self.dim, positions }
    }

    pub fn translated(&self, shift: &[f64]) -> Self {
        let positions =
            self.positions.chunks_exact(self.dim).flat_map(|p| p.iter().zip(shift).map(|(x, s)| x + s)).collect();
        Self { dim: self.dim, positions }
    }
}

/// Compactly supported initial densities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialMeasure {
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    /// Isotropic Gaussian conditioned on `|x - mean| <= radius * std`.
    TruncatedGaussian { mean: Vec<f64>, std: f64, radius: f64 },
    PointMass { at: Vec<f64> },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Independent draws from a seeded ChaCha8 stream. Sampling `n` then `2n` particles
    /// with the same seed yields nested clouds.
    #[default]
    Random,
    /// Halton sequence (bases 2, 3, 5, ...) mapped into the box; deterministic.
    Halton,
    /// Tensor midpoint rule; `N` must be a perfect `d`-th power.
    Midpoint,
}

impl InitialMeasure {
    pub fn dim(&self) -> usize {
        match self {
            InitialMeasure::UniformBox { lower, .. } => lower.len(),
            InitialMeasure::TruncatedGaussian { mean, .. } => mean.len(),
            InitialMeasure::PointMass { at } => at.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InitialMeasure::UniformBox { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::config("uniform-box bounds must have equal, positive length"));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u)) {
                    return Err(Error::config("uniform-box needs finite lower < upper in every axis"));
                }
            }
            InitialMeasure::TruncatedGaussian { mean, std, radius } => {
                if mean.is_empty() || !(std.is_finite() && *std > 0.0 && radius.is_finite() && *radius > 0.0) {
                    return Err(Error::config("truncated-gaussian needs a mean, std > 0 and radius > 0"));
                }
            }
            InitialMeasure::PointMass { at } => {
                if at.is_empty() || at.iter().any(|x| !x.is_finite()) {
                    return Err(Error::config("point-mass location must be finite and non-empty"));
                }
            }
        }
        Ok(())
    }

    /// Radius of a ball around the origin containing the support.
    pub fn support_radius(&self) -> f64 {
        match self {
            InitialMeasure::UniformBox { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| l.abs().max(u.abs()).powi(2)).sum::<f64>().sqrt()
            }
            InitialMeasure::TruncatedGaussian { mean, std, radius } => {
                mean.iter().map(|m| m * m).sum::<f64>().sqrt() + std * radius
            }
            InitialMeasure::PointMass { at } => at.iter().map(|m| m * m).sum::<f64>().sqrt(),
        }
    }
}

/// Draws `n` particles from `measure`; deterministic given `seed` and `mode`.
pub fn sample_initial_ensemble(
    measure: &InitialMeasure,
    n: usize,
    seed: u64,
    mode: SamplingMode,
) -> Result<ParticleEnsemble> {
    measure.validate()?;
    if n == 0 {
        return Err(Error::config("particle count must be positive"));
    }
    let d = measure.dim();
    let mut positions = Vec::with_capacity(n * d);
    match (measure, mode) {
        (InitialMeasure::PointMass { at }, _) => {
            for _ in 0..n {
                positions.extend_from_slice(at);
            }
        }
        (InitialMeasure::UniformBox { lower, upper }, SamplingMode::Random) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..n {
                for (l, u) in lower.iter().zip(upper) {
                    positions.push(l + (u - l) * rng.random::<f64>());
                }
            }
        }
        (InitialMeasure::UniformBox { lower, upper }, SamplingMode::Halton) => {
            for i in 0..n {
                for (a, (l, u)) in lower.iter().zip(upper).enumerate() {
                    positions.push(l + (u - l) * radical_inverse(i as u64 + 1, PRIMES[a % PRIMES.len()]));
                }
            }
        }
        (InitialMeasure::UniformBox { lower, upper }, SamplingMode::Midpoint) => {
            let side = (n as f64).powf(1.0 / d as f64).round() as usize;
            if side.pow(d as u32) != n {
                return Err(Error::config(format!("midpoint sampling needs N = k^{d}, got {n}")));
            }
            for i in 0..n {
                let mut rest = i;
                for (l, u) in lower.iter().zip(upper) {
                    let idx = rest % side;
                    rest /= side;
                    positions.push(l + (u - l) * (idx as f64 + 0.5) / side as f64);
                }
            }
        }
        (InitialMeasure::TruncatedGaussian { mean, std, radius }, SamplingMode::Random) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut z = vec![0.0; d];
            for _ in 0..n {
                loop {
                    z.iter_mut().for_each(|zi| *zi = StandardNormal.sample(&mut rng));
                    if z.iter().map(|v| v * v).sum::<f64>() <= radius * radius {
                        break;
                    }
                }
                positions.extend(mean.iter().zip(&z).map(|(m, zi)| m + std * zi));
            }
        }
        (InitialMeasure::TruncatedGaussian { .. }, _) => {
            return Err(Error::Unsupported("deterministic sampling of truncated-gaussian".into()));
        }
    }
    ParticleEnsemble::new(d, positions)
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}
