//! Polygamma functions and related special functions.

pub use statrs::function::gamma::{digamma, ln_gamma};

const SHIFT: f64 = 10.0;

/// Trigamma function psi'(x) for x > 0.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return if x == f64::INFINITY { 0.0 } else { f64::NAN };
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < SHIFT {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let z = 1.0 / (x * x);
    // Asymptotic series with Bernoulli numbers B2..B16.
    let tail = z
        * (1.0 / 6.0
            - z * (1.0 / 30.0
                - z * (1.0 / 42.0 - z * (1.0 / 30.0 - z * (5.0 / 66.0 - z * (691.0 / 2730.0 - z * (7.0 / 6.0)))))));
    acc + 1.0 / x + 0.5 * z + tail / x
}

/// Tetragamma function psi''(x) for x > 0.
pub fn tetragamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return if x == f64::INFINITY { 0.0 } else { f64::NAN };
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < SHIFT {
        acc -= 2.0 / (x * x * x);
        x += 1.0;
    }
    let z = 1.0 / (x * x);
    let tail = z
        * (0.5
            - z * (1.0 / 6.0
                - z * (1.0 / 6.0 - z * (3.0 / 10.0 - z * (5.0 / 6.0 - z * (691.0 / 210.0 - z * (35.0 / 2.0)))))));
    acc - z / x - z - z * tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn trigamma_known_values() {
        assert!((trigamma(1.0) - PI * PI / 6.0).abs() < 1e-14);
        assert!((trigamma(2.0) - (PI * PI / 6.0 - 1.0)).abs() < 1e-14);
        assert!((trigamma(0.5) - PI * PI / 2.0).abs() < 1e-13);
    }

    #[test]
    fn trigamma_matches_digamma_derivative() {
        for &x in &[0.03_f64, 0.4, 1.7, 5.5, 12.0, 150.0, 3.0e4] {
            let h = 1e-5 * x.max(1e-2);
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            let rel = (trigamma(x) - fd).abs() / trigamma(x);
            assert!(rel < 1e-6, "x={x} rel={rel}");
        }
    }

    #[test]
    fn tetragamma_known_values() {
        // psi''(1) = -2 zeta(3)
        let zeta3 = 1.202_056_903_159_594_2;
        assert!((tetragamma(1.0) + 2.0 * zeta3).abs() < 1e-13);
        assert!((tetragamma(2.0) - (2.0 - 2.0 * zeta3)).abs() < 1e-13);
    }

    #[test]
    fn tetragamma_matches_trigamma_derivative() {
        for &x in &[0.05_f64, 0.8, 3.3, 9.9, 10.1, 77.0, 1.0e4] {
            let h = 1e-5 * x.max(1e-2);
            let fd = (trigamma(x + h) - trigamma(x - h)) / (2.0 * h);
            let rel = (tetragamma(x) - fd).abs() / tetragamma(x).abs();
            assert!(rel < 1e-6, "x={x} rel={rel}");
        }
    }
}
