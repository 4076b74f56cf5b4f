//! Normal and binomial helpers shared by the simulation and the tests.

use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};
use statrs::function::erf::erfc;

/// `P(Z > z)` for standard normal `Z`, accurate in the far upper tail.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

pub fn normal_cdf(z: f64) -> f64 {
    normal_sf(-z)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Smallest `k` with `P(X <= k) >= p` for `X ~ Binomial(n, prob)`.
pub fn binomial_quantile(n: u64, prob: f64, p: f64) -> u64 {
    let d = Binomial::new(prob, n).expect("valid binomial parameters");
    (0..=n).find(|&k| d.cdf(k) >= p).unwrap_or(n)
}

/// Central `level` band for a rejection rate estimated from `n` replicates
/// when the true rate is `prob`, from exact binomial quantiles.
pub fn binomial_band(n: u64, prob: f64, level: f64) -> (f64, f64) {
    let tail = (1.0 - level) / 2.0;
    let lo = binomial_quantile(n, prob, tail);
    let hi = binomial_quantile(n, prob, 1.0 - tail);
    (lo as f64 / n as f64, hi as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tails_agree_with_cdf() {
        for z in [-3.0, -0.5, 0.0, 1.0, 2.5] {
            let direct = Normal::standard().cdf(z);
            assert!((normal_cdf(z) - direct).abs() < 1e-15);
        }
        assert!(normal_sf(30.0) > 0.0);
        let back = normal_quantile(normal_sf(-1.3));
        assert!((back - 1.3).abs() < 1e-9, "{back}");
        let far = normal_quantile(normal_sf(20.0));
        assert!((far + 20.0).abs() < 1e-6, "{far}");
    }

    #[test]
    fn binomial_quantiles_by_summation() {
        let (n, p) = (300u64, 0.05f64);
        // Cumulative sum of the pmf computed in log space.
        let ln_pmf = |k: u64| {
            let lgamma = |x: f64| statrs::function::gamma::ln_gamma(x);
            lgamma(n as f64 + 1.0) - lgamma(k as f64 + 1.0) - lgamma((n - k) as f64 + 1.0)
                + k as f64 * p.ln()
                + (n - k) as f64 * (1.0 - p).ln()
        };
        let quantile = |target: f64| {
            let mut acc = 0.0;
            for k in 0..=n {
                acc += ln_pmf(k).exp();
                if acc >= target {
                    return k;
                }
            }
            n
        };
        assert_eq!(binomial_quantile(n, p, 0.005), quantile(0.005));
        assert_eq!(binomial_quantile(n, p, 0.995), quantile(0.995));
    }
}
