//! Fixed quadrature rule shared by the cost, gradient, adjoint and diagnostic integrals.

/// Three-point Gauss-Legendre rule on `[0, 1]` as `(node, weight)` pairs.
pub const GAUSS3: [(f64, f64); 3] = [
    (0.5 - 0.387_298_334_620_741_7, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.5 + 0.387_298_334_620_741_7, 5.0 / 18.0),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rule_is_exact_for_quintics() {
        for p in 0..=5 {
            let q: f64 = GAUSS3.iter().map(|(s, w)| w * s.powi(p)).sum();
            assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-15, "degree {p}");
        }
    }
}
