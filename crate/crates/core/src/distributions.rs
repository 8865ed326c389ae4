//! Quantiles of the standard normal and chi-squared laws.

use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF, Normal};

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probability {p} outside (0,1)");
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

/// `z_{0.75} - z_{0.25}`, the interquartile range of the standard normal.
pub fn normal_iqr() -> f64 {
    normal_quantile(0.75) - normal_quantile(0.25)
}

/// Chi-squared quantile with `df` degrees of freedom.
///
/// The library inverse is polished with safeguarded Newton steps so the result
/// solves `F(x) = p` to about 1e-12 relative accuracy.
pub fn chi2_quantile(p: f64, df: usize) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probability {p} outside (0,1)");
    assert!(df >= 1, "chi-squared needs at least one degree of freedom");
    let dist = ChiSquared::new(df as f64).unwrap();
    let mut x = dist.inverse_cdf(p);
    // bracket around the starting point
    let (mut lo, mut hi) = (0.0_f64, x.max(1.0));
    while dist.cdf(hi) < p {
        hi *= 2.0;
    }
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }
    for _ in 0..100 {
        let g = dist.cdf(x) - p;
        if g.abs() <= 1e-15 {
            break;
        }
        if g > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = dist.pdf(x);
        let mut next = if d > 0.0 { x - g / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-14 * x.max(1.0) {
            x = next;
            break;
        }
        x = next;
    }
    x
}

/// Type-7 (linear interpolation) sample quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
