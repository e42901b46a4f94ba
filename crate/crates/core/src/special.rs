//! Special functions used by the negative-binomial likelihood.
//!
//! `ln_gamma`, `digamma` and the normal distribution come from `statrs`.
//! Trigamma, which `statrs` lacks, uses upward recurrence followed by the
//! asymptotic series. The difference helpers switch to exact finite sums for small
//! integer counts so that `psi(y + r) - psi(r)` keeps its relative accuracy
//! when `r` is large.

use statrs::distribution::{ContinuousCDF, Normal};

/// Above this size parameter the NB difference terms use their
/// Poisson-limit forms.
pub const LARGE_SIZE: f64 = 1e8;

const SMALL_INTEGER_SUM: f64 = 64.0;

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

pub fn digamma(x: f64) -> f64 {
    statrs::function::gamma::digamma(x)
}

pub fn trigamma(mut x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series =
        inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0)))));
    acc + inv + 0.5 * inv2 + inv * series
}

fn is_small_integer(y: f64) -> bool {
    (0.0..=SMALL_INTEGER_SUM).contains(&y) && y == y.floor()
}

/// `psi(y + r) - psi(r)`, replaced by `log1p(y / r)` once `r >= 1e8`.
pub fn psi_delta(y: f64, r: f64) -> f64 {
    if r >= LARGE_SIZE {
        return (y / r).ln_1p();
    }
    if is_small_integer(y) {
        return (0..y as usize).map(|k| 1.0 / (r + k as f64)).sum();
    }
    digamma(y + r) - digamma(r)
}

/// `psi'(y + r) - psi'(r)`, replaced by `-(y / r) / (y + r)` once `r >= 1e8`.
pub fn psi_prime_delta(y: f64, r: f64) -> f64 {
    if r >= LARGE_SIZE {
        return -(y / r) / (y + r);
    }
    if is_small_integer(y) {
        return -(0..y as usize)
            .map(|k| {
                let t = r + k as f64;
                1.0 / (t * t)
            })
            .sum::<f64>();
    }
    trigamma(y + r) - trigamma(r)
}

/// `ln_gamma(y + r) - ln_gamma(r)` without cancellation when `r` is large.
pub fn ln_gamma_ratio(y: f64, r: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    if is_small_integer(y) {
        return (0..y as usize).map(|k| (r + k as f64).ln()).sum();
    }
    if r >= 10.0 {
        let x = y + r;
        (r - 0.5) * (y / r).ln_1p() + y * x.ln() - y + stirling_tail(x) - stirling_tail(r)
    } else {
        ln_gamma(y + r) - ln_gamma(r)
    }
}

fn stirling_tail(x: f64) -> f64 {
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Two-sided tail probability `2 * (1 - Phi(|z|))`.
pub fn two_sided_p(z: f64) -> f64 {
    2.0 * std_normal().cdf(-z.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn digamma_known_values() {
        let euler = 0.577_215_664_901_532_9;
        assert_relative_eq!(digamma(1.0), -euler, max_relative = 1e-14);
        assert_relative_eq!(digamma(0.5), -euler - 2.0 * 2f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(digamma(10.0), 2.251_752_589_066_721, max_relative = 1e-14);
        assert_relative_eq!(digamma(1e6), 13.815_510_057_964_275, max_relative = 1e-14);
    }

    #[test]
    fn trigamma_known_values() {
        let pi2 = std::f64::consts::PI.powi(2);
        assert_relative_eq!(trigamma(1.0), pi2 / 6.0, max_relative = 1e-13);
        assert_relative_eq!(trigamma(0.5), pi2 / 2.0, max_relative = 1e-13);
        assert_relative_eq!(trigamma(2.5), pi2 / 2.0 - 4.0 - 4.0 / 9.0, max_relative = 1e-13);
    }

    #[test]
    fn digamma_recurrence_holds() {
        for &x in &[0.01, 0.3, 1.7, 4.2, 9.9, 25.0, 1e3] {
            assert_relative_eq!(digamma(x + 1.0) - digamma(x), 1.0 / x, max_relative = 1e-12);
            assert_relative_eq!(trigamma(x) - trigamma(x + 1.0), 1.0 / (x * x), max_relative = 1e-11);
        }
    }

    #[test]
    fn psi_delta_of_one_is_reciprocal() {
        for &r in &[0.1, 1.0, 7.5, 1e5, 1e9] {
            assert_relative_eq!(psi_delta(1.0, r), 1.0 / r, max_relative = 1e-8);
        }
    }

    #[test]
    fn difference_forms_agree_across_switch() {
        for &y in &[0.0, 1.0, 3.0, 17.0, 250.0, 3.5] {
            let below = psi_delta(y, LARGE_SIZE * 0.999_999);
            let above = psi_delta(y, LARGE_SIZE);
            assert!((below - above).abs() <= 1e-5 * above.abs().max(1e-12), "y={y}");
            let below = psi_prime_delta(y, LARGE_SIZE * 0.999_999);
            let above = psi_prime_delta(y, LARGE_SIZE);
            assert!((below - above).abs() <= 1e-5 * above.abs().max(1e-30), "y={y}");
        }
    }

    #[test]
    fn non_integer_difference_matches_direct() {
        let (y, r) = (70.25, 3.0);
        assert_relative_eq!(psi_delta(y, r), digamma(y + r) - digamma(r), max_relative = 1e-14);
    }

    #[test]
    fn ln_gamma_ratio_matches_direct() {
        for &(y, r) in &[(3.0, 2.5), (100.0, 20.0), (1234.5, 56.0), (0.5, 11.0), (70.0, 0.3)] {
            let direct = ln_gamma(y + r) - ln_gamma(r);
            assert_relative_eq!(ln_gamma_ratio(y, r), direct, max_relative = 1e-11);
        }
    }

    #[test]
    fn normal_helpers() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(normal_quantile(0.975), 1.959_963_984_540_054, max_relative = 1e-9);
        assert_relative_eq!(two_sided_p(1.959_963_984_540_054), 0.05, max_relative = 1e-8);
    }
}
