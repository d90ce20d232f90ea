//! Small statistics helpers shared by the experiments.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Estimate with symmetric confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    /// Sample mean.
    pub mean: f64,
    /// `1.96 s / √n`.
    pub half_width: f64,
    /// Sample standard deviation.
    pub std_dev: f64,
    /// Sample size.
    pub n: usize,
}

/// Mean with 95% normal confidence half-width.
pub fn mean_ci(xs: &[f64]) -> MeanCi {
    let n = xs.len();
    if n == 0 {
        return MeanCi {
            mean: f64::NAN,
            half_width: f64::NAN,
            std_dev: f64::NAN,
            n,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let sd = var.sqrt();
    MeanCi {
        mean,
        half_width: Z95 * sd / (n as f64).sqrt(),
        std_dev: sd,
        n,
    }
}

/// Wilson score interval for `k` successes in `n` trials at quantile `z`.
pub fn wilson(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    // The endpoints at k = 0 and k = n are exact; the formula leaves roundoff.
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k >= n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Ranks with ties averaged, starting at 1.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = avg;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation; `NaN` for degenerate input.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// Least-squares line `y = slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Observed convergence order from errors at step sizes `h`: the slope of
/// `log e` against `log h`.
pub fn observed_order(h: &[f64], err: &[f64]) -> f64 {
    let lx: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).0
}

/// Two-sided sign test of zero median; zeros are dropped.
pub fn sign_test(xs: &[f64]) -> f64 {
    let pos = xs.iter().filter(|&&v| v > 0.0).count() as u64;
    let neg = xs.iter().filter(|&&v| v < 0.0).count() as u64;
    let n = pos + neg;
    if n == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n).expect("p = 1/2 is valid");
    let k = pos.min(neg);
    (2.0 * b.cdf(k)).min(1.0)
}

/// Empirical quantile with linear interpolation, `q ∈ [0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_matches_hand_computation() {
        // k = 0, n = 10: upper = z²/n / (1 + z²/n)
        let (lo, hi) = wilson(0, 10, Z95);
        let z2n = Z95 * Z95 / 10.0;
        assert_eq!(lo, 0.0);
        assert!((hi - z2n / (1.0 + z2n)).abs() < 1e-12);
        for n in [1, 7, 100, 200, 1000] {
            assert_eq!(wilson(0, n, Z95).0, 0.0);
            assert_eq!(wilson(n, n, Z95).1, 1.0);
            assert!(wilson(1, n, Z95).0 > 0.0);
        }
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sign_test_is_symmetric() {
        assert_eq!(sign_test(&[1.0, -1.0]), 1.0);
        let p = sign_test(&[1.0; 10]);
        assert!((p - 2.0 / 1024.0).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_power_law() {
        let h = [0.1, 0.05, 0.025];
        let e: Vec<f64> = h.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((observed_order(&h, &e) - 1.5).abs() < 1e-12);
    }
}
