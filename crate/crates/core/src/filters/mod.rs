//! Observation models, Girsanov likelihoods and particle filters for the
//! sensor-noise and Lévy-noise observation schemes.

pub mod generator;
pub mod metrics;
pub mod observation;
pub mod particle;
pub mod residual;
pub mod weights;

use std::io::Write;
use std::path::Path;

use crate::averaging::fmt17;
use crate::error::{config_err, Result};

/// Registered test functions. All but `ClippedLinear` are C^2 with
/// registered first and second derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestFunction {
    One,
    Tanh,
    /// x clipped to [-R, R].
    ClippedLinear(f64),
    /// exp(-x^2).
    Gaussian,
    Linear,
    Square,
}

impl TestFunction {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "one" => Ok(Self::One),
            "tanh" => Ok(Self::Tanh),
            "gauss" => Ok(Self::Gaussian),
            "x" => Ok(Self::Linear),
            "x2" => Ok(Self::Square),
            other => match other.strip_prefix("clip:") {
                Some(r) => match r.parse::<f64>() {
                    Ok(r) if r > 0.0 => Ok(Self::ClippedLinear(r)),
                    _ => config_err(format!("bad clip radius `{r}`")),
                },
                None => config_err(format!(
                    "unknown test function `{other}` (one, tanh, clip:R, gauss, x, x2)"
                )),
            },
        }
    }

    pub fn id(&self) -> String {
        match self {
            Self::One => "one".into(),
            Self::Tanh => "tanh".into(),
            Self::ClippedLinear(r) => format!("clip:{r}"),
            Self::Gaussian => "gauss".into(),
            Self::Linear => "x".into(),
            Self::Square => "x2".into(),
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Self::One => 1.0,
            Self::Tanh => x.tanh(),
            Self::ClippedLinear(r) => x.clamp(-r, r),
            Self::Gaussian => (-x * x).exp(),
            Self::Linear => x,
            Self::Square => x * x,
        }
    }

    /// (psi, psi', psi''), or a configuration error for non-C^2 entries.
    #[inline]
    pub fn jet(&self, x: f64) -> Result<(f64, f64, f64)> {
        Ok(match *self {
            Self::One => (1.0, 0.0, 0.0),
            Self::Tanh => {
                let t = x.tanh();
                let s = 1.0 - t * t;
                (t, s, -2.0 * t * s)
            }
            Self::Gaussian => {
                let g = (-x * x).exp();
                (g, -2.0 * x * g, (4.0 * x * x - 2.0) * g)
            }
            Self::Linear => (x, 1.0, 0.0),
            Self::Square => (x * x, 2.0 * x, 2.0),
            Self::ClippedLinear(_) => {
                return config_err(format!("test function {} has no registered derivatives", self.id()))
            }
        })
    }
}

/// Filter estimates recorded at checkpoint times.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterTrace {
    pub times: Vec<f64>,
    pub phis: Vec<TestFunction>,
    /// `pi_hat[c][j]`: estimate of pi_t(phi_j) at checkpoint c.
    pub pi_hat: Vec<Vec<f64>>,
    pub log_rho1: Vec<f64>,
    pub ess: Vec<f64>,
    pub resamples: usize,
}

impl FilterTrace {
    pub fn last(&self, phi: usize) -> f64 {
        self.pi_hat.last().map(|r| r[phi]).unwrap_or(f64::NAN)
    }

    pub fn last_log_rho1(&self) -> f64 {
        self.log_rho1.last().copied().unwrap_or(f64::NAN)
    }

    /// CSV with columns t, phi_id, pi_hat, rho1_hat, ess.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_to(std::fs::File::create(path)?)
    }

    pub fn write_csv_to(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "phi_id", "pi_hat", "rho1_hat", "ess"])?;
        for (c, t) in self.times.iter().enumerate() {
            for (j, phi) in self.phis.iter().enumerate() {
                w.write_record([
                    fmt17(*t),
                    phi.id(),
                    fmt17(self.pi_hat[c][j]),
                    fmt17(self.log_rho1[c].exp()),
                    fmt17(self.ess[c]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jets_match_finite_differences() {
        let h = 1e-5;
        for f in [
            TestFunction::Tanh,
            TestFunction::Gaussian,
            TestFunction::Square,
            TestFunction::Linear,
        ] {
            for &x in &[-1.3, 0.0, 0.4, 2.0] {
                let (v, d1, d2) = f.jet(x).unwrap();
                assert_eq!(v, f.value(x));
                let fd1 = (f.value(x + h) - f.value(x - h)) / (2.0 * h);
                let fd2 = (f.value(x + h) - 2.0 * v + f.value(x - h)) / (h * h);
                assert!((d1 - fd1).abs() < 1e-8, "{f:?} d1 at {x}");
                assert!((d2 - fd2).abs() < 1e-4, "{f:?} d2 at {x}");
            }
        }
        assert!(TestFunction::ClippedLinear(2.0).jet(0.0).is_err());
    }

    #[test]
    fn parse_round_trip() {
        for s in ["one", "tanh", "clip:3", "gauss", "x", "x2"] {
            assert_eq!(TestFunction::parse(s).unwrap().id(), s);
        }
        assert!(TestFunction::parse("sin").is_err());
        assert!(TestFunction::parse("clip:-1").is_err());
    }
}
