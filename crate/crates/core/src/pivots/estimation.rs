//! Selective MLE and the selection-adjusted posterior for the randomized
//! threshold problem √n·ȳ + ω > τ, ω ~ N(0, γ²), unit-variance data.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::special::{norm_hazard, norm_log_sf};

/// Root of a decreasing function by Newton steps safeguarded with
/// bisection on a bracket [lo, hi] with f(lo) > 0 > f(hi).
fn decreasing_root<F: Fn(f64) -> (f64, f64)>(
    f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<f64> {
    let mut x = 0.5 * (lo + hi);
    for _ in 0..500 {
        let (v, dv) = f(x);
        if v.abs() < tol {
            return Ok(x);
        }
        if v > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - v / dv;
        x = if dv < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 * (1.0 + x.abs()) {
            let (v, _) = f(x);
            if v.abs() < tol {
                return Ok(x);
            }
            return Err(Error::NoConvergence {
                sweeps: 500,
                residual: v.abs(),
            });
        }
    }
    let (v, _) = f(x);
    Err(Error::NoConvergence {
        sweeps: 500,
        residual: v.abs(),
    })
}

/// Expands `lo` downward by `step` until f(lo) > 0.
fn bracket_below<F: Fn(f64) -> (f64, f64)>(f: &F, mut lo: f64, step: f64) -> Result<f64> {
    for _ in 0..1000 {
        if f(lo).0 > 0.0 {
            return Ok(lo);
        }
        lo -= step;
    }
    Err(Error::numerical("could not bracket the root", &[lo]))
}

fn check(n: usize, gamma: f64, ybar: f64, tau: f64) -> Result<()> {
    if n == 0 || !(gamma > 0.0) || !ybar.is_finite() || tau.is_nan() {
        return Err(Error::invalid("need n ≥ 1, γ > 0 and finite ȳ"));
    }
    Ok(())
}

/// Solves √n(ȳ − μ) = h(z)/√(1+γ²), z = (τ − √nμ)/√(1+γ²), h the normal hazard.
pub fn selective_mle(ybar: f64, n: usize, tau: f64, gamma: f64) -> Result<f64> {
    check(n, gamma, ybar, tau)?;
    let sn = (n as f64).sqrt();
    let s = (1.0 + gamma * gamma).sqrt();
    let score = |mu: f64| {
        let z = (tau - sn * mu) / s;
        let h = norm_hazard(z);
        let v = sn * (ybar - mu) - h / s;
        let dh = h * (h - z);
        (v, -sn + sn * dh / (s * s))
    };
    let lo = bracket_below(&score, ybar - 20.0 / sn, 20.0 / sn)?;
    decreasing_root(score, lo, ybar + 1.0 / sn, 1e-11)
}

/// Draws and summaries of the selection-adjusted posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub draws: Vec<f64>,
    pub map: f64,
    pub acceptance: f64,
}

impl Posterior {
    pub fn mean(&self) -> f64 {
        crate::stats::mean(&self.draws)
    }

    pub fn variance(&self) -> f64 {
        crate::stats::variance(&self.draws)
    }
}

/// π(θ | ȳ) ∝ φ(√n(ȳ − θ))·π(θ) / (1 − Φ((τ − √nθ)/√(1+γ²))) with a
/// Gaussian prior, sampled by independence Metropolis–Hastings around the
/// MAP. The proposal variance is the inverse of the smallest curvature of
/// the log posterior (inflated), so it dominates the target's tails.
pub fn bayes_posterior_simple<R: Rng + ?Sized>(
    ybar: f64,
    n: usize,
    tau: f64,
    gamma: f64,
    prior: (f64, f64),
    n_draws: usize,
    rng: &mut R,
) -> Result<Posterior> {
    check(n, gamma, ybar, tau)?;
    let (prior_mean, prior_sd) = prior;
    if !(prior_sd > 0.0) || !prior_mean.is_finite() {
        return Err(Error::invalid("prior sd must be positive"));
    }
    let nf = n as f64;
    let sn = nf.sqrt();
    let s = (1.0 + gamma * gamma).sqrt();
    let prec0 = 1.0 / (prior_sd * prior_sd);
    let log_post = |th: f64| {
        -0.5 * nf * (ybar - th).powi(2)
            - norm_log_sf((tau - sn * th) / s)
            - 0.5 * prec0 * (th - prior_mean).powi(2)
    };
    let deriv = |th: f64| {
        let z = (tau - sn * th) / s;
        let h = norm_hazard(z);
        let v = nf * (ybar - th) - sn / s * h - prec0 * (th - prior_mean);
        let dv = -nf + nf / (s * s) * h * (h - z) - prec0;
        (v, dv)
    };
    let start = ybar.min(prior_mean) - 20.0 / sn - 20.0 * prior_sd.min(1.0);
    let lo = bracket_below(&deriv, start, 20.0 / sn + prior_sd.min(1.0))?;
    let mut hi = ybar.max(prior_mean) + 1.0 / sn;
    while deriv(hi).0 >= 0.0 {
        hi += 1.0 / sn + prior_sd.min(1.0);
    }
    let map = decreasing_root(deriv, lo, hi, 1e-10 * (nf + prec0))?;
    let min_curvature = nf * (1.0 - 1.0 / (s * s)) + prec0;
    let sd = 1.2 / min_curvature.sqrt();
    let log_q = |th: f64| -0.5 * ((th - map) / sd).powi(2);

    let burn = 1000;
    let mut th = map;
    let mut lp = log_post(th) - log_q(th);
    let mut draws = Vec::with_capacity(n_draws);
    let mut accepted = 0usize;
    for i in 0..burn + n_draws {
        let prop = map + sd * rng.sample::<f64, _>(StandardNormal);
        let lp_new = log_post(prop) - log_q(prop);
        if !lp_new.is_finite() && lp_new.is_nan() {
            return Err(Error::numerical(
                "posterior evaluation produced NaN",
                &[prop],
            ));
        }
        if lp_new >= lp || rng.gen::<f64>().ln() < lp_new - lp {
            th = prop;
            lp = lp_new;
            if i >= burn {
                accepted += 1;
            }
        }
        if i >= burn {
            draws.push(th);
        }
    }
    Ok(Posterior {
        draws,
        map,
        acceptance: accepted as f64 / n_draws.max(1) as f64,
    })
}
