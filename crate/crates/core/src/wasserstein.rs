//! Exact 2-Wasserstein distance between equal-size, equal-weight empirical measures.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default maximum cloud size accepted by [`w2_assignment`].
pub const DEFAULT_ASSIGNMENT_CAP: usize = 4096;

/// An optimal pairing `x^i <-> y^{pi(i)}` and its mean squared transport cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pub permutation: Vec<usize>,
    pub cost: f64,
}

impl Coupling {
    /// `(1/N) sum_i |x^i - y^{pi(i)}|^2` recomputed from the permutation.
    pub fn transport_cost(&self, a: &[f64], b: &[f64], dim: usize) -> f64 {
        let n = self.permutation.len();
        self.permutation
            .iter()
            .enumerate()
            .map(|(i, &j)| sq_dist(&a[i * dim..(i + 1) * dim], &b[j * dim..(j + 1) * dim]))
            .sum::<f64>()
            / n as f64
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.permutation.len()];
        for &j in &self.permutation {
            if j >= seen.len() || seen[j] {
                return false;
            }
            seen[j] = true;
        }
        true
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub distance: f64,
    pub coupling: Coupling,
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// One-dimensional `W2` by rank matching.
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!("w2_1d needs equal non-empty sizes, got {} and {}", a.len(), b.len())));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let s: f64 = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum();
    Ok((s / a.len() as f64).sqrt())
}

/// Exact `W2` between two `N`-point clouds in `R^dim` via the Hungarian method.
pub fn w2_assignment(a: &[f64], b: &[f64], dim: usize) -> Result<Assignment> {
    w2_assignment_capped(a, b, dim, DEFAULT_ASSIGNMENT_CAP)
}

pub fn w2_assignment_capped(a: &[f64], b: &[f64], dim: usize, cap: usize) -> Result<Assignment> {
    if dim == 0 || a.len() != b.len() || a.is_empty() || !a.len().is_multiple_of(dim) {
        return Err(Error::shape(format!("assignment needs equal non-empty clouds, got {} and {} coordinates", a.len(), b.len())));
    }
    let n = a.len() / dim;
    if n > cap {
        return Err(Error::CapExceeded { size: n, cap });
    }
    let mut cost = vec![0.0; n * n];
    cost.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let x = &a[i * dim..(i + 1) * dim];
        for (j, c) in row.iter_mut().enumerate() {
            *c = sq_dist(x, &b[j * dim..(j + 1) * dim]);
        }
    });
    let permutation = hungarian(&cost, n);
    let coupling = Coupling { cost: 0.0, permutation };
    let total = coupling.transport_cost(a, b, dim);
    Ok(Assignment { distance: total.max(0.0).sqrt(), coupling: Coupling { cost: total, ..coupling } })
}

/// `W2` between an `N`-cloud and a reference cloud of size `k N`, by duplicating each
/// point of the smaller cloud `k` times.
pub fn w2_to_reference(cloud: &[f64], reference: &[f64], dim: usize) -> Result<f64> {
    let (n, m) = (cloud.len() / dim, reference.len() / dim);
    if n == 0 || m % n != 0 {
        return Err(Error::config(format!("reference size {m} is not a multiple of the cloud size {n}")));
    }
    if dim == 1 {
        let dup: Vec<f64> = cloud.iter().flat_map(|&x| std::iter::repeat_n(x, m / n)).collect();
        return w2_1d(&dup, reference);
    }
    let dup: Vec<f64> = cloud.chunks_exact(dim).flat_map(|p| std::iter::repeat_n(p, m / n).flatten().copied()).collect();
    Ok(w2_assignment(&dup, reference, dim)?.distance)
}

/// Shortest-augmenting-path Hungarian method with potentials, `O(n^3)`.
/// Returns `p` with row `i` assigned to column `p[i]`.
fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[j] = row (1-based) matched to column j; p[0] is the row being inserted
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let ui0 = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - ui0 - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f64> {
        (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn one_dimensional_examples() {
        assert_eq!(w2_1d(&[0.3, -1.0], &[-1.0, 0.3]).unwrap(), 0.0);
        assert!((w2_1d(&[0.0, 2.0], &[1.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(w2_1d(&[0.0], &[-2.5]).unwrap(), 2.5);
        assert!(w2_1d(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn two_point_example_by_brute_force() {
        let (a, b): ([f64; 2], [f64; 2]) = ([0.0, 2.0], [1.0, 3.0]);
        let best = [[0, 1], [1, 0]]
            .iter()
            .map(|p| ((a[0] - b[p[0]]).powi(2) + (a[1] - b[p[1]]).powi(2)) / 2.0)
            .fold(f64::INFINITY, f64::min);
        assert!((w2_1d(&a, &b).unwrap() - best.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn assignment_matches_sorting_in_one_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1usize, 2, 5, 17, 64, 200] {
            let a = random_cloud(&mut rng, n, 1);
            let b = random_cloud(&mut rng, n, 1);
            let exact = w2_1d(&a, &b).unwrap();
            let hung = w2_assignment(&a, &b, 1).unwrap();
            assert!((exact - hung.distance).abs() < 1e-12, "n {n}");
            assert!(hung.coupling.is_bijection());
        }
    }

    #[test]
    fn assignment_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=6 {
            let perms: Vec<Vec<usize>> = (0..n).permutations(n).collect();
            for _ in 0..5 {
                let a = random_cloud(&mut rng, n, 2);
                let b = random_cloud(&mut rng, n, 2);
                let best = perms
                    .iter()
                    .map(|p| Coupling { permutation: p.clone(), cost: 0.0 }.transport_cost(&a, &b, 2))
                    .fold(f64::INFINITY, f64::min);
                let hung = w2_assignment(&a, &b, 2).unwrap();
                assert_eq!(hung.coupling.cost, hung.coupling.transport_cost(&a, &b, 2));
                assert!((hung.coupling.cost - best).abs() <= 1e-15 * best.max(1.0), "n {n}");
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        let a = vec![0.0; 10];
        assert!(matches!(w2_assignment_capped(&a, &a, 1, 4), Err(Error::CapExceeded { size: 10, cap: 4 })));
    }

    #[test]
    fn reference_duplication() {
        let cloud = [0.0, 1.0];
        let reference = [0.0, 0.1, 0.9, 1.0];
        let expected = ((0.01 + 0.01) / 4.0f64).sqrt();
        assert!((w2_to_reference(&cloud, &reference, 1).unwrap() - expected).abs() < 1e-15);
        let c2 = [0.0, 0.0, 1.0, 0.0];
        let r2 = [0.0, 0.0, 0.1, 0.0, 0.9, 0.0, 1.0, 0.0];
        assert!((w2_to_reference(&c2, &r2, 2).unwrap() - expected).abs() < 1e-15);
        assert!(w2_to_reference(&[0.0, 1.0, 2.0], &reference, 1).is_err());
    }

    #[test]
    fn metric_axioms_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let n = rng.random_range(1..9);
            let (a, b, c) = (random_cloud(&mut rng, n, 2), random_cloud(&mut rng, n, 2), random_cloud(&mut rng, n, 2));
            let w = |x: &[f64], y: &[f64]| w2_assignment(x, y, 2).unwrap().distance;
            assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-12);
            assert!((w(&a, &b) - w(&b, &a)).abs() < 1e-12);
            assert!(w(&a, &b) >= 0.0);
            assert_eq!(w(&a, &a), 0.0);
        }
    }

    proptest::proptest! {
        #[test]
        fn translation_and_permutation_invariance(
            pts in proptest::collection::vec(-2.0f64..2.0, 16),
            shift in proptest::collection::vec(-3.0f64..3.0, 2),
            rot in 0usize..4,
        ) {
            let (a, b) = pts.split_at(8);
            let base = w2_assignment(a, b, 2).unwrap().distance;
            let ta: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + shift[i % 2]).collect();
            let tb: Vec<f64> = b.iter().enumerate().map(|(i, x)| x + shift[i % 2]).collect();
            proptest::prop_assert!((w2_assignment(&ta, &tb, 2).unwrap().distance - base).abs() < 1e-12);
            let mut pb = b.to_vec();
            pb.rotate_left(2 * rot);
            proptest::prop_assert!((w2_assignment(a, &pb, 2).unwrap().distance - base).abs() < 1e-12);
            let zero = base == 0.0;
            proptest::prop_assert_eq!(zero, a == b || w2_assignment(a, b, 2).unwrap().coupling.cost == 0.0);
        }
    }
}
