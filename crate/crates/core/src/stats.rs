//! Small Monte Carlo statistics used by the estimators and experiments.

use crate::rng::{SeedSpec, StreamRng};

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::NAN
        };
        Self { mean, se, n }
    }

    /// Standard error inflated for lag-1 autocorrelation of a stationary chain.
    pub fn from_correlated(xs: &[f64]) -> Self {
        let mut e = Self::from_samples(xs);
        let rho = lag1_autocorrelation(xs).clamp(0.0, 0.99);
        e.se *= ((1.0 + rho) / (1.0 - rho)).sqrt();
        e
    }

    /// True when |mean - target| <= k * se.
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 3 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    let var: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    cov / var
}

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let t = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Bootstrap standard error of the KS statistic for paired samples
/// (pairs are resampled jointly).
pub fn ks_bootstrap_se(a: &[f64], b: &[f64], resamples: usize, seed: &SeedSpec) -> f64 {
    use rand::Rng;
    let n = a.len().min(b.len());
    if n < 2 || resamples < 2 {
        return f64::NAN;
    }
    let mut rng: StreamRng = seed.rng();
    let mut stats = Vec::with_capacity(resamples);
    let mut ra = vec![0.0; n];
    let mut rb = vec![0.0; n];
    for _ in 0..resamples {
        for k in 0..n {
            let i = rng.random_range(0..n);
            ra[k] = a[i];
            rb[k] = b[i];
        }
        stats.push(ks_statistic(&ra, &rb));
    }
    sample_variance(&stats).sqrt()
}

/// Non-increasing within noise: v[i+1] <= v[i] + k * sqrt(se[i]^2 + se[i+1]^2).
pub fn non_increasing_within(values: &[f64], ses: &[f64], k: f64) -> bool {
    values.windows(2).zip(ses.windows(2)).all(|(v, s)| {
        v[1] <= v[0] + k * (s[0] * s[0] + s[1] * s[1]).sqrt()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_basics() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!(Estimate::from_samples(&[]).mean.is_nan());
    }

    #[test]
    fn ks_known_values() {
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert!((ks_statistic(&[1.0, 3.0], &[2.0, 4.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn monotone_helper() {
        assert!(non_increasing_within(&[3.0, 2.0, 1.0], &[0.0; 3], 3.0));
        assert!(!non_increasing_within(&[1.0, 2.0], &[0.1, 0.1], 3.0));
        assert!(non_increasing_within(&[1.0, 1.2], &[0.1, 0.1], 3.0));
    }

    #[test]
    fn lag1_of_alternating_sequence() {
        let xs: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(lag1_autocorrelation(&xs) < -0.9);
    }
}
