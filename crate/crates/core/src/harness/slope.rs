use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub se: f64,
    /// 95% confidence interval for the slope.
    pub ci: (f64, f64),
    pub used: usize,
    pub excluded: usize,
}

impl SlopeFit {
    pub fn ci_contains(&self, v: f64) -> bool {
        self.ci.0 <= v && v <= self.ci.1
    }
}

/// Weighted least squares of log(value) on log(eps). Weights are 1/s^2 with
/// s = SE/value (delta method); if any usable point has zero SE the fit is
/// unweighted. The covariance is scaled by the reduced chi-square, and the
/// interval uses Student t with n - 2 degrees of freedom.
pub fn fit_loglog_slope(points: &[(f64, f64, f64)]) -> Result<SlopeFit> {
    let usable: Vec<&(f64, f64, f64)> = points
        .iter()
        .filter(|(e, v, _)| *e > 0.0 && *v > 0.0 && v.is_finite())
        .collect();
    let excluded = points.len() - usable.len();
    if excluded > 0 {
        log::warn!("slope fit: excluded {excluded} nonpositive point(s)");
    }
    let n = usable.len();
    if n < 3 {
        return Err(Error::Fit(format!("need at least 3 positive points, got {n}")));
    }
    let weighted = usable.iter().all(|(_, _, s)| *s > 0.0);
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let data: Vec<(f64, f64, f64)> = usable
        .iter()
        .map(|&&(e, v, s)| {
            let w = if weighted { (v / s).powi(2) } else { 1.0 };
            (e.ln(), v.ln(), w)
        })
        .collect();
    for &(x, y, w) in &data {
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let det = sw * sxx - sx * sx;
    if !(det.abs() > 1e-300) {
        return Err(Error::Fit("degenerate abscissae".into()));
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / sw;
    let dof = (n - 2) as f64;
    let chi2: f64 = data
        .iter()
        .map(|&(x, y, w)| w * (y - intercept - slope * x).powi(2))
        .sum();
    let se = (sw / det * chi2 / dof).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::Fit(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(SlopeFit {
        slope,
        intercept,
        se,
        ci: (slope - t * se, slope + t * se),
        used: n,
        excluded,
    })
}
