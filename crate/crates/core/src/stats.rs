//! Confidence intervals and small regressions.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;

/// Inverse of `x -> I_x(a, b)` by bisection.
fn beta_quantile(a: f64, b: f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact (Clopper-Pearson) two-sided interval for a binomial proportion at
/// confidence `level`.
pub fn clopper_pearson(k: u64, n: u64, level: f64) -> (f64, f64) {
    assert!(n > 0 && k <= n && level > 0.0 && level < 1.0);
    let alpha = 1.0 - level;
    let lo = if k == 0 { 0.0 } else { beta_quantile(k as f64, (n - k + 1) as f64, alpha / 2.0) };
    let hi = if k == n { 1.0 } else { beta_quantile((k + 1) as f64, (n - k) as f64, 1.0 - alpha / 2.0) };
    (lo, hi)
}

/// Standard-error surrogate for a binomial proportion: half the width of the
/// exact 95% interval over 1.96. Stays positive at zero counts.
pub fn binomial_sigma(k: u64, n: u64) -> f64 {
    let (lo, hi) = clopper_pearson(k, n, 0.95);
    (hi - lo) / (2.0 * 1.959_963_984_540_054)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

/// `mean -+ z * se` at two-sided confidence `level`.
pub fn normal_ci(mean: f64, se: f64, level: f64) -> (f64, f64) {
    let z = normal_quantile(0.5 + level / 2.0);
    (mean - z * se, mean + z * se)
}

/// Simultaneous intervals for multinomial cell probabilities: each cell gets
/// an exact binomial interval at the Bonferroni-adjusted level.
pub fn multinomial_simultaneous(counts: &[u64], level: f64) -> Vec<(f64, f64)> {
    let n: u64 = counts.iter().sum();
    let cells = counts.len().max(1) as f64;
    let each = 1.0 - (1.0 - level) / cells;
    counts.iter().map(|&k| clopper_pearson(k, n, each)).collect()
}

/// Ordinary least squares fit `y = intercept + slope * x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_se: f64,
    pub points: usize,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let slope_se = if n > 2 { (sse / (n - 2) as f64 / sxx).sqrt() } else { 0.0 };
    Some(LinearFit { slope, intercept, r2, slope_se, points: n })
}

/// OLS slope weights: `slope = sum_i w_i y_i`.
pub fn slope_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    x.iter().map(|v| (v - mx) / sxx).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clopper_pearson_known_values() {
        // k = 0: upper limit is 1 - (alpha/2)^(1/n).
        let (lo, hi) = clopper_pearson(0, 10, 0.95);
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.025f64.powf(0.1))).abs() < 1e-10);
        // k = n mirrors it.
        let (lo, hi) = clopper_pearson(10, 10, 0.95);
        assert_eq!(hi, 1.0);
        assert!((lo - 0.025f64.powf(0.1)).abs() < 1e-10);
        // Symmetry k <-> n - k.
        let (a, b) = clopper_pearson(3, 17, 0.99);
        let (c, e) = clopper_pearson(14, 17, 0.99);
        assert!((a - (1.0 - e)).abs() < 1e-10 && (b - (1.0 - c)).abs() < 1e-10);
    }

    #[test]
    fn clopper_pearson_tail_identity() {
        // At the lower limit p_L, P(X >= k | p_L) = alpha/2.
        let (k, n) = (37u64, 1000u64);
        let (lo, hi) = clopper_pearson(k, n, 0.95);
        let upper_tail = beta_reg(k as f64, (n - k + 1) as f64, lo);
        assert!((upper_tail - 0.025).abs() < 1e-9);
        let lower_tail = 1.0 - beta_reg((k + 1) as f64, (n - k) as f64, hi);
        assert!((lower_tail - 0.025).abs() < 1e-9);
    }

    #[test]
    fn large_n_small_k() {
        let (lo, hi) = clopper_pearson(5, 10_000_000, 0.95);
        assert!(lo > 0.0 && lo < 5e-7 && hi > 5e-7 && hi < 2e-6);
    }

    #[test]
    fn sigma_close_to_wald_for_moderate_counts() {
        let (k, n) = (5000u64, 100_000u64);
        let p = k as f64 / n as f64;
        let wald = (p * (1.0 - p) / n as f64).sqrt();
        assert!((binomial_sigma(k, n) / wald - 1.0).abs() < 0.01);
        assert!(binomial_sigma(0, n) > 0.0);
    }

    #[test]
    fn regression_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && (f.intercept - 2.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        let w = slope_weights(&x);
        let s: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((s + 0.5).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[1.0]).is_none());
    }
}
