//! Small statistics toolkit: KS tests, chi-square, bootstrap, least squares.

use crate::rng::{stream, Domain};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Unbiased sample covariance.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (xs.len() as f64 - 1.0)
}

pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("positive sd").cdf(x)
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // theta-function form converges fast for small arguments
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for k in 1..=20 {
            let m = (2 * k - 1) as f64;
            s += (c * m * m).exp();
        }
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-300 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample KS test against `cdf`, asymptotic p-value with Stephens'
/// small-sample correction.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        d = d.max(f - i as f64 / nf).max((i + 1) as f64 / nf - f);
    }
    let sq = nf.sqrt();
    KsResult {
        n,
        statistic: d,
        p_value: kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d),
    }
}

/// Upper tail of the chi-square distribution.
pub fn chi2_sf(stat: f64, dof: f64) -> f64 {
    1.0 - ChiSquared::new(dof).expect("positive dof").cdf(stat)
}

/// Pearson chi-square statistic and p-value for observed counts against
/// expected probabilities.
pub fn chi2_test(observed: &[u64], probs: &[f64]) -> (f64, f64) {
    let total: u64 = observed.iter().sum();
    let mut stat = 0.0;
    for (o, p) in observed.iter().zip(probs) {
        let e = p * total as f64;
        if e > 0.0 {
            stat += (*o as f64 - e).powi(2) / e;
        }
    }
    let dof = (observed.len() - 1) as f64;
    (stat, chi2_sf(stat, dof))
}

/// Chi-square test that values in [0, 1] are uniform, on `bins` equal bins.
pub fn uniformity_test(values: &[f64], bins: usize) -> (f64, f64) {
    let mut counts = vec![0u64; bins];
    for v in values {
        let i = ((v * bins as f64).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    chi2_test(&counts, &vec![1.0 / bins as f64; bins])
}

/// Bootstrap standard error of `stat` over rows of `data`, using the
/// `Bootstrap` stream family at `index`.
pub fn bootstrap_se<T>(
    data: &[T],
    resamples: usize,
    seed: u64,
    index: u64,
    stat: impl Fn(&[&T]) -> f64,
) -> f64 {
    let mut rng = stream(seed, Domain::Bootstrap, index);
    let n = data.len();
    let mut picks: Vec<&T> = Vec::with_capacity(n);
    let mut vals = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        picks.clear();
        for _ in 0..n {
            picks.push(&data[rng.random_range(0..n)]);
        }
        vals.push(stat(&picks));
    }
    variance(&vals).sqrt()
}

/// Bootstrap standard error of the mean of scalar data.
pub fn bootstrap_mean_se(data: &[f64], resamples: usize, seed: u64, index: u64) -> f64 {
    bootstrap_se(data, resamples, seed, index, |xs| {
        xs.iter().map(|x| **x).sum::<f64>() / xs.len() as f64
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope from the residuals (0 with two points).
    pub slope_se: f64,
}

pub fn ols(points: &[(f64, f64)]) -> LinearFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if points.len() > 2 {
        let rss: f64 = points
            .iter()
            .map(|p| (p.1 - intercept - slope * p.0).powi(2))
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LinearFit {
        slope,
        intercept,
        slope_se,
    }
}

pub fn ols_slope(points: &[(f64, f64)]) -> f64 {
    ols(points).slope
}

/// Weighted least-squares slope with known per-point standard errors of `y`.
pub fn wls(points: &[(f64, f64)], se: &[f64]) -> LinearFit {
    let w: Vec<f64> = se.iter().map(|s| 1.0 / (s * s)).collect();
    let sw: f64 = w.iter().sum();
    let mx = points.iter().zip(&w).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let my = points.iter().zip(&w).map(|(p, w)| w * p.1).sum::<f64>() / sw;
    let sxx: f64 = points.iter().zip(&w).map(|(p, w)| w * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .zip(&w)
        .map(|(p, w)| w * (p.0 - mx) * (p.1 - my))
        .sum();
    let slope = sxy / sxx;
    LinearFit {
        slope,
        intercept: my - slope * mx,
        slope_se: (1.0 / sxx).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_branches_agree() {
        for l in [0.9, 0.95, 1.0, 1.05] {
            let c = -std::f64::consts::PI.powi(2) / (8.0 * l * l);
            let theta: f64 = (1..=20)
                .map(|k| (c * ((2 * k - 1) as f64).powi(2)).exp())
                .sum::<f64>();
            let small = 1.0 - (2.0 * std::f64::consts::PI).sqrt() / l * theta;
            let big: f64 = 2.0
                * (1..=100)
                    .map(|k| {
                        let t = (-2.0 * (k * k) as f64 * l * l).exp();
                        if k % 2 == 1 {
                            t
                        } else {
                            -t
                        }
                    })
                    .sum::<f64>();
            assert!((small - big).abs() < 1e-12);
        }
        // textbook critical value
        assert!((kolmogorov_sf(1.358) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn ols_recovers_line() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 - 2.0 * i as f64)).collect();
        let f = ols(&pts);
        assert!((f.slope + 2.0).abs() < 1e-12 && (f.intercept - 3.0).abs() < 1e-12);
    }

    #[test]
    fn chi2_sf_known_value() {
        // 95th percentile of chi2 with 9 dof
        assert!((chi2_sf(16.919, 9.0) - 0.05).abs() < 1e-4);
    }
}
