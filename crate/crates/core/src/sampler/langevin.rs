//! Projected Langevin dynamics with a diagonal preconditioner.

use rand::Rng;
use rand_distr::StandardNormal;

use super::LogDensity;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LangevinConfig {
    pub steps: usize,
    /// η in preconditioned units; `None` picks the default from the initial gradient.
    pub step_size: Option<f64>,
    /// Fraction of steps discarded as burn-in.
    pub burn_in: f64,
    pub thin: usize,
    /// Coordinates to keep; all when `None`.
    pub record: Option<Vec<usize>>,
    /// Accept/reject each move (MALA) instead of projecting. Proposals that
    /// leave the support are rejected.
    pub metropolis: bool,
    /// With `metropolis`, tune η during burn-in toward an acceptance rate
    /// of 0.574. The retained part of the chain uses a fixed η.
    pub adapt: bool,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            steps: 50_000,
            step_size: None,
            burn_in: 0.2,
            thin: 1,
            record: None,
            metropolis: false,
            adapt: false,
        }
    }
}

/// Retained states (only the recorded coordinates), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub dim: usize,
    pub values: Vec<f64>,
    pub step_size: f64,
    /// Fraction of accepted moves for MALA; 1 for the projected chain.
    pub acceptance: f64,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.values.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(i)
            .step_by(self.dim)
            .copied()
            .collect()
    }
}

const TARGET_ACCEPTANCE: f64 = 0.574;

/// 0.5 / √(d + ‖D∇log p(x₀)‖²).
pub fn default_step_size<D: LogDensity + ?Sized>(density: &D, x0: &[f64]) -> f64 {
    let scales = density.scales();
    let mut g = vec![0.0; x0.len()];
    density.grad(x0, &mut g);
    let norm2: f64 = g
        .iter()
        .zip(&scales)
        .map(|(g, s)| (g * s).powi(2))
        .filter(|v| v.is_finite())
        .sum();
    0.5 / (x0.len() as f64 + norm2).sqrt()
}

/// Runs x ← Π(x + η D²∇log p(x) + √(2η) D ξ) from `init` after projecting it
/// and keeps the `config.record` coordinates of every retained state.
pub fn langevin_sample<D: LogDensity + ?Sized, R: Rng + ?Sized>(
    density: &D,
    init: &[f64],
    config: &LangevinConfig,
    rng: &mut R,
) -> Result<Chain> {
    let dim = density.dim();
    let record: Vec<usize> = config.record.clone().unwrap_or_else(|| (0..dim).collect());
    if let Some(&bad) = record.iter().find(|&&i| i >= dim) {
        return Err(Error::invalid(format!(
            "record coordinate {bad} out of range"
        )));
    }
    let mut values = Vec::new();
    let stats = langevin_run(density, init, config, rng, |x| {
        values.extend(record.iter().map(|&i| x[i]))
    })?;
    Ok(Chain {
        dim: record.len(),
        values,
        step_size: stats.step_size,
        acceptance: stats.acceptance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunStats {
    pub step_size: f64,
    pub acceptance: f64,
}

/// The Langevin loop; `observe` sees every retained full state.
pub fn langevin_run<D: LogDensity + ?Sized, R: Rng + ?Sized, F: FnMut(&[f64])>(
    density: &D,
    init: &[f64],
    config: &LangevinConfig,
    rng: &mut R,
    mut observe: F,
) -> Result<RunStats> {
    let dim = density.dim();
    if init.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: init.len(),
        });
    }
    if !(0.0..1.0).contains(&config.burn_in) || config.thin == 0 {
        return Err(Error::invalid(
            "burn-in must be in [0, 1) and thin positive",
        ));
    }
    let mut x = init.to_vec();
    density.project(&mut x);
    let mut grad = vec![0.0; dim];
    let mut logp = density.grad(&x, &mut grad);
    if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numerical(
            "initial state is not in the support after projection",
            &x,
        ));
    }
    let mut eta = match config.step_size {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::invalid(format!("step size {s} must be positive"))),
        None => default_step_size(density, &x),
    };
    let scales = density.scales();
    let burn = (config.steps as f64 * config.burn_in) as usize;
    let mut proposal = vec![0.0; dim];
    let mut noise = vec![0.0; dim];
    let mut grad_new = vec![0.0; dim];
    let mut accepted = 0usize;

    for step in 0..config.steps {
        noise
            .iter_mut()
            .for_each(|v| *v = rng.sample(StandardNormal));
        let mut halvings = 0;
        loop {
            for i in 0..dim {
                let s = scales[i];
                proposal[i] = x[i] + eta * s * s * grad[i] + (2.0 * eta).sqrt() * s * noise[i];
            }
            if !config.metropolis {
                density.project(&mut proposal);
            }
            let logp_new = density.grad(&proposal, &mut grad_new);
            let finite = proposal.iter().all(|v| v.is_finite())
                && grad_new
                    .iter()
                    .all(|g| g.is_finite() || !logp_new.is_finite());
            if finite && !logp_new.is_nan() {
                let mut accept_prob = 0.0;
                let accept = if config.metropolis {
                    logp_new.is_finite() && {
                        let log_q = |to: &[f64], from: &[f64], g_from: &[f64]| -> f64 {
                            (0..dim)
                                .map(|i| {
                                    let s = scales[i];
                                    let r = (to[i] - from[i] - eta * s * s * g_from[i]) / s;
                                    -r * r / (4.0 * eta)
                                })
                                .sum()
                        };
                        let log_ratio = logp_new - logp + log_q(&x, &proposal, &grad_new)
                            - log_q(&proposal, &x, &grad);
                        accept_prob = log_ratio.min(0.0).exp();
                        log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio
                    }
                } else {
                    logp_new.is_finite()
                };
                if accept {
                    x.copy_from_slice(&proposal);
                    grad.copy_from_slice(&grad_new);
                    logp = logp_new;
                    accepted += 1;
                } else if !config.metropolis {
                    return Err(Error::numerical(
                        "projected state left the support",
                        &proposal,
                    ));
                }
                if config.metropolis && config.adapt && step < burn {
                    let gain = 2.0 * (step as f64 + 10.0).powf(-0.6);
                    eta = (eta.ln() + gain * (accept_prob - TARGET_ACCEPTANCE))
                        .exp()
                        .clamp(1e-12, 10.0);
                }
                break;
            }
            halvings += 1;
            if halvings > 20 {
                return Err(Error::numerical("Langevin step produced NaN", &x));
            }
            eta *= 0.5;
        }
        if step >= burn && (step - burn).is_multiple_of(config.thin) {
            observe(&x);
        }
    }
    Ok(RunStats {
        step_size: eta,
        acceptance: accepted as f64 / config.steps.max(1) as f64,
    })
}
