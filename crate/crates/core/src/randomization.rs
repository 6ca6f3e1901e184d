//! Randomization distributions added to selection queries.
//!
//! All three families are symmetric about zero, so `1 − G(−x) = G(x)`;
//! the marginal selection weights used throughout the crate rely on this.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::special::{norm_cdf, norm_log_cdf, norm_log_sf, norm_sf, softplus, LN_SQRT_2PI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Laplace,
    Logistic,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Laplace => "laplace",
            Family::Logistic => "logistic",
        }
    }

    /// Whether the negative log-density is Lipschitz with smooth derivatives,
    /// the condition under which plug-in pivots stay valid for rare selections.
    /// Laplace is log-Lipschitz but has a kink at zero.
    pub fn is_log_lipschitz_smooth(self) -> bool {
        matches!(self, Family::Logistic)
    }
}

/// An iid product randomization ω ∈ ℝᵈ with a common one-dimensional law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomizationSpec {
    family: Family,
    scale: f64,
    dimension: usize,
}

impl RandomizationSpec {
    pub fn new(family: Family, scale: f64, dimension: usize) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!(
                "randomization scale must be positive, got {scale}"
            )));
        }
        if dimension == 0 {
            return Err(Error::invalid("randomization dimension must be at least 1"));
        }
        Ok(Self {
            family,
            scale,
            dimension,
        })
    }

    pub fn gaussian(scale: f64) -> Result<Self> {
        Self::new(Family::Gaussian, scale, 1)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Same family and scale in a different dimension.
    pub fn with_dimension(&self, dimension: usize) -> Result<Self> {
        Self::new(self.family, self.scale, dimension)
    }

    pub fn variance(&self) -> f64 {
        let s2 = self.scale * self.scale;
        match self.family {
            Family::Gaussian => s2,
            Family::Laplace => 2.0 * s2,
            Family::Logistic => s2 * std::f64::consts::PI.powi(2) / 3.0,
        }
    }

    /// Log density of one coordinate.
    pub fn log_density_1d(&self, w: f64) -> f64 {
        let s = self.scale;
        match self.family {
            Family::Gaussian => {
                let z = w / s;
                -0.5 * z * z - LN_SQRT_2PI - s.ln()
            }
            Family::Laplace => -w.abs() / s - (2.0 * s).ln(),
            Family::Logistic => {
                let z = w / s;
                // log(e^{-z} / (s (1 + e^{-z})²)), symmetric in z.
                let a = z.abs();
                -a - 2.0 * softplus(-a) - s.ln()
            }
        }
    }

    /// Derivative of the one-coordinate log density (0 at the Laplace kink).
    pub fn grad_log_density_1d(&self, w: f64) -> f64 {
        let s = self.scale;
        match self.family {
            Family::Gaussian => -w / (s * s),
            Family::Laplace => {
                if w > 0.0 {
                    -1.0 / s
                } else if w < 0.0 {
                    1.0 / s
                } else {
                    0.0
                }
            }
            Family::Logistic => -(w / (2.0 * s)).tanh() / s,
        }
    }

    /// Curvature scale used for preconditioning samplers: 1/variance for the
    /// Gaussian, the matching Fisher information for the others.
    pub fn fisher_information(&self) -> f64 {
        let s2 = self.scale * self.scale;
        match self.family {
            Family::Gaussian => 1.0 / s2,
            Family::Laplace => 1.0 / s2,
            Family::Logistic => 1.0 / (3.0 * s2),
        }
    }

    pub fn log_density(&self, w: &[f64]) -> Result<f64> {
        check_dim(self.dimension, w.len())?;
        Ok(self.log_density_unchecked(w))
    }

    pub(crate) fn log_density_unchecked(&self, w: &[f64]) -> f64 {
        w.iter().map(|&x| self.log_density_1d(x)).sum()
    }

    pub fn grad_log_density(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dimension, w.len())?;
        Ok(w.iter().map(|&x| self.grad_log_density_1d(x)).collect())
    }

    /// One-dimensional CDF G(x).
    pub fn cdf(&self, x: f64) -> f64 {
        let z = x / self.scale;
        match self.family {
            Family::Gaussian => norm_cdf(z),
            Family::Laplace => {
                if z < 0.0 {
                    0.5 * z.exp()
                } else {
                    1.0 - 0.5 * (-z).exp()
                }
            }
            Family::Logistic => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// 1 − G(x), accurate in the upper tail.
    pub fn sf(&self, x: f64) -> f64 {
        match self.family {
            Family::Gaussian => norm_sf(x / self.scale),
            _ => self.cdf(-x),
        }
    }

    pub fn log_cdf(&self, x: f64) -> f64 {
        let z = x / self.scale;
        match self.family {
            Family::Gaussian => norm_log_cdf(z),
            Family::Laplace => {
                if z < 0.0 {
                    z - std::f64::consts::LN_2
                } else {
                    (-0.5 * (-z).exp()).ln_1p()
                }
            }
            Family::Logistic => -softplus(-z),
        }
    }

    pub fn log_sf(&self, x: f64) -> f64 {
        match self.family {
            Family::Gaussian => norm_log_sf(x / self.scale),
            _ => self.log_cdf(-x),
        }
    }

    /// log P(t + ω > τ) = log(1 − G(τ − t)), the marginal selection weight
    /// of a randomized threshold query.
    pub fn log_selection_weight(&self, tau: f64, t: f64) -> f64 {
        self.log_sf(tau - t)
    }

    pub fn sample_1d<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let s = self.scale;
        match self.family {
            Family::Gaussian => s * rng.sample::<f64, _>(StandardNormal),
            Family::Laplace => {
                let u: f64 = rng.gen::<f64>() - 0.5;
                -s * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            Family::Logistic => {
                let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                s * (u / (1.0 - u)).ln()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dimension).map(|_| self.sample_1d(rng)).collect()
    }
}

impl fmt::Display for RandomizationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.family.name(), self.scale)
    }
}

/// Parses the `family:scale` form used on the command line, dimension 1.
impl FromStr for RandomizationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (family, scale) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("expected family:scale, got {s:?}")))?;
        let family = match family.trim() {
            "gaussian" => Family::Gaussian,
            "laplace" => Family::Laplace,
            "logistic" => Family::Logistic,
            other => {
                return Err(Error::invalid(format!(
                    "unknown randomization family {other:?}"
                )))
            }
        };
        let scale: f64 = scale
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad randomization scale in {s:?}")))?;
        Self::new(family, scale, 1)
    }
}
