//! Confidence intervals by pivot inversion, and reweighting of chains
//! drawn at one parameter value to another.

use super::report::{IntervalReport, PivotEstimate};
use crate::error::{Error, Result};

pub const INVERSION_GRID_POINTS: usize = 401;
const INVERSION_HALF_WIDTH: f64 = 10.0;
pub const MIN_EFFECTIVE_SAMPLE_SIZE: f64 = 50.0;

/// Inverts a pivot that is nonincreasing in the parameter over a 401-point
/// grid on estimate ± 10·se. Grid points where the pivot cannot be
/// evaluated (too few effective samples, or a selection event the sampler
/// cannot reach) are skipped; an endpoint
/// with no crossing inside the usable grid is open (±∞).
pub fn invert_pivot<F>(pivot_fn: F, estimate: f64, se: f64, alpha: f64) -> Result<IntervalReport>
where
    F: Fn(f64) -> Result<PivotEstimate>,
{
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha = {alpha} is not in (0, 1]")));
    }
    if !(se > 0.0 && se.is_finite()) || !estimate.is_finite() {
        return Err(Error::invalid(
            "inversion needs a finite estimate and positive se",
        ));
    }
    let n = INVERSION_GRID_POINTS;
    let start = estimate - INVERSION_HALF_WIDTH * se;
    let step = 2.0 * INVERSION_HALF_WIDTH * se / (n - 1) as f64;
    let mut grid = Vec::with_capacity(n);
    for i in 0..n {
        let m = start + step * i as f64;
        match pivot_fn(m) {
            Ok(p) => grid.push((m, p.value, p.mc_se.unwrap_or(0.0))),
            Err(Error::LowEffectiveSampleSize { .. } | Error::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if grid.len() < 2 {
        return Err(Error::Degenerate(
            "pivot could not be evaluated on the inversion grid".into(),
        ));
    }
    for w in grid.windows(2) {
        let (jump, allowed) = (
            w[1].1 - w[0].1,
            3.0 * (w[0].2.powi(2) + w[1].2.powi(2)).sqrt() + 1e-9,
        );
        if jump > allowed {
            return Err(Error::NonMonotonePivot {
                at: w[1].0,
                jump,
                allowed,
            });
        }
    }
    let hi_level = 1.0 - alpha / 2.0;
    let lo_level = alpha / 2.0;
    let crossing = |level: f64, below_is_strict: bool| -> Option<f64> {
        let j = grid.iter().position(|&(_, p, _)| {
            if below_is_strict {
                p < level
            } else {
                p <= level
            }
        })?;
        if j == 0 {
            return Some(f64::NEG_INFINITY);
        }
        let (m0, p0, _) = grid[j - 1];
        let (m1, p1, _) = grid[j];
        Some(if p0 == p1 {
            m0
        } else {
            m0 + (p0 - level) / (p0 - p1) * (m1 - m0)
        })
    };
    let last = grid.last().expect("nonempty").0;
    let first = grid[0].0;
    let lower = crossing(hi_level, true).unwrap_or(last);
    let upper = match crossing(lo_level, true) {
        None => f64::INFINITY,
        Some(v) if v == f64::NEG_INFINITY => first,
        Some(v) => v,
    };
    Ok(IntervalReport {
        target: String::new(),
        level: 1.0 - alpha,
        lower,
        upper: upper.max(lower),
        grid_points: n,
        grid_step: step,
    })
}

/// Normalized importance weights with their effective sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct Reweighted {
    pub weights: Vec<f64>,
    pub ess: f64,
}

impl Reweighted {
    /// Weighted fraction of samples below `observed`, with a delta-method
    /// importance-sampling standard error.
    pub fn fraction_below(&self, samples: &[f64], observed: f64) -> PivotEstimate {
        let p: f64 = self
            .weights
            .iter()
            .zip(samples)
            .filter(|(_, s)| **s < observed)
            .map(|(w, _)| w)
            .sum();
        let var: f64 = self
            .weights
            .iter()
            .zip(samples)
            .map(|(w, s)| (w * ((if *s < observed { 1.0 } else { 0.0 }) - p)).powi(2))
            .sum();
        PivotEstimate::sampled(p, var.sqrt())
    }
}

fn normalize(log_w: Vec<f64>) -> Result<Reweighted> {
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::LowEffectiveSampleSize { ess: 0.0 });
    }
    let w: Vec<f64> = log_w.iter().map(|v| (v - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let weights: Vec<f64> = w.iter().map(|v| v / total).collect();
    let ess = 1.0 / weights.iter().map(|v| v * v).sum::<f64>();
    if ess < MIN_EFFECTIVE_SAMPLE_SIZE {
        return Err(Error::LowEffectiveSampleSize { ess });
    }
    Ok(Reweighted { weights, ess })
}

/// Weights exp(((m − m₀)t − (m² − m₀²)/2)/v) moving a chain of the data
/// coordinate drawn with Gaussian reference mean m₀ to mean m.
pub fn tilt_reweight(chain: &[f64], m0: f64, m: f64, var: f64) -> Result<Reweighted> {
    gaussian_reweight(chain, m0, var, m, var)
}

/// Weights φ_{m,v}(t)/φ_{m₀,v₀}(t) for a chain drawn with a Gaussian
/// reference N(m₀, v₀) on the data coordinate.
pub fn gaussian_reweight(
    chain: &[f64],
    m0: f64,
    var0: f64,
    m: f64,
    var: f64,
) -> Result<Reweighted> {
    if !(var > 0.0 && var0 > 0.0) {
        return Err(Error::invalid("reference variances must be positive"));
    }
    if chain.is_empty() {
        return Err(Error::LowEffectiveSampleSize { ess: 0.0 });
    }
    let log_w = chain
        .iter()
        .map(|&t| -(t - m).powi(2) / (2.0 * var) + (t - m0).powi(2) / (2.0 * var0))
        .collect();
    normalize(log_w)
}
