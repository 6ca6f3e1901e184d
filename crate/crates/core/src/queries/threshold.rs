use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Aux, QueryOutcome};
use crate::error::{Error, Result};
use crate::randomization::RandomizationSpec;

/// Randomized one-sided z-test: selects when √n·ȳ + ω > τ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdQuery {
    pub tau: f64,
    pub randomization: Option<RandomizationSpec>,
}

impl ThresholdQuery {
    pub fn new(tau: f64, randomization: Option<RandomizationSpec>) -> Result<Self> {
        if tau.is_nan() {
            return Err(Error::invalid("threshold must not be NaN"));
        }
        if let Some(r) = &randomization {
            if r.dimension() != 1 {
                return Err(Error::invalid(
                    "threshold randomization must be one-dimensional",
                ));
            }
        }
        Ok(Self { tau, randomization })
    }

    /// √n·ȳ.
    pub fn statistic(y: &[f64]) -> f64 {
        let n = y.len() as f64;
        y.iter().sum::<f64>() / n.sqrt()
    }

    pub fn draw_omega<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.randomization.map_or(0.0, |r| r.sample_1d(rng))
    }

    /// Solves at a given statistic and randomization. The optimization
    /// variable is z = t + ω with support z > τ.
    pub fn solve_stat(&self, t: f64, omega: f64) -> QueryOutcome {
        let z = t + omega;
        let selected = z > self.tau;
        QueryOutcome {
            selected: if selected { vec![0] } else { Vec::new() },
            signs: if selected { vec![1] } else { Vec::new() },
            aux: Aux::Threshold { z },
        }
    }

    pub fn solve<R: Rng + ?Sized>(&self, y: &[f64], rng: &mut R) -> QueryOutcome {
        let omega = self.draw_omega(rng);
        self.solve_stat(Self::statistic(y), omega)
    }

    /// ω = z − √n·ȳ.
    pub fn reconstruct(&self, t: f64, z: f64) -> Result<f64> {
        if !(z > self.tau) {
            return Err(Error::SupportViolation(format!(
                "z = {z} is not above τ = {}",
                self.tau
            )));
        }
        Ok(z - t)
    }
}
