//! Pivots for the mean after a threshold query √n·ȳ (+ ω) > τ.
//!
//! Everything is on the √n scale: `t` = √n·ȳ and `m` = √n·μ.

use rand::Rng;
use rand_distr::StandardNormal;

use super::report::PivotEstimate;
use crate::error::{Error, Result};
use crate::randomization::RandomizationSpec;
use crate::sampler::{
    langevin_run, ConditionalProblem, LangevinConfig, LogDensity, SelectiveDensity,
};
use crate::special::norm_log_sf;
use crate::stats::effective_sample_size;

pub const DEFAULT_BOOTSTRAP_DRAWS: usize = 4000;
pub const DEFAULT_CHAIN_STEPS: usize = 50_000;
const GRID_POINTS: usize = 1024;
const GRID_HALF_WIDTH: f64 = 12.0;
/// ln(1e-300).
const LOG_MASS_FLOOR: f64 = -690.7755278982137;

/// (Φ(t−m) − Φ(τ−m)) / (1 − Φ(τ−m)), computed as
/// 1 − exp(log sf(t−m) − log sf(τ−m)) so deep truncation stays accurate.
pub fn tg_pivot(t: f64, m: f64, tau: f64) -> Result<f64> {
    if t.is_nan() || m.is_nan() || tau.is_nan() {
        return Err(Error::NonFinite("tg pivot argument".into()));
    }
    if t < tau {
        return Err(Error::invalid(format!(
            "t = {t} did not pass the threshold τ = {tau}"
        )));
    }
    let v = -(norm_log_sf(t - m) - norm_log_sf(tau - m)).exp_m1();
    Ok(v.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PluginMethod {
    Grid,
    Mcmc { steps: usize, seed: u64 },
}

/// P(Z < t | Z + ω > τ) for Z ~ N(m, 1), ω ~ G.
pub fn plugin_randomized_pivot(
    t: f64,
    m: f64,
    tau: f64,
    g: &RandomizationSpec,
    method: PluginMethod,
) -> Result<PivotEstimate> {
    if t.is_nan() || !m.is_finite() || tau.is_nan() {
        return Err(Error::NonFinite("plugin pivot argument".into()));
    }
    match method {
        PluginMethod::Grid => plugin_grid(t, m, tau, g).map(PivotEstimate::exact),
        PluginMethod::Mcmc { steps, seed } => plugin_mcmc(t, m, tau, g, steps, seed),
    }
}

fn plugin_grid(t: f64, m: f64, tau: f64, g: &RandomizationSpec) -> Result<f64> {
    if t == f64::INFINITY {
        return Ok(1.0);
    }
    if t == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let log_f = |x: f64| -0.5 * (x - m).powi(2) + g.log_sf(tau - x);
    // The integrand is a Gaussian times a log-concave factor, so it has
    // variance at most 1 around its mode, which lies in [m, m + h(τ − m)]
    // with h the hazard of G.
    let hazard = |y: f64| (g.log_density_1d(y) - g.log_sf(y)).exp();
    let slope = |x: f64| -(x - m) + hazard(tau - x);
    let mut lo = m;
    let mut hi = m + hazard(tau - m) + 1e-9;
    if !hi.is_finite() {
        return Err(Error::numerical(
            "selection hazard overflowed",
            &[t, m, tau],
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mode = 0.5 * (lo + hi);
    let (a, b) = (mode - GRID_HALF_WIDTH, mode + GRID_HALF_WIDTH);
    let h = (b - a) / (GRID_POINTS - 1) as f64;
    let mut xs: Vec<f64> = (0..GRID_POINTS).map(|i| a + h * i as f64).collect();
    let gamma = g.scale();
    xs.extend(
        (-8..=8)
            .map(|k| tau + gamma * k as f64)
            .filter(|x| *x > a && *x < b),
    );
    if t > a && t < b {
        xs.push(t);
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let lf: Vec<f64> = xs.iter().map(|&x| log_f(x)).collect();
    let top = lf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::numerical(
            "selective density vanishes on the grid",
            &[t, m, tau],
        ));
    }
    let f: Vec<f64> = lf.iter().map(|v| (v - top).exp()).collect();
    let mut total = 0.0;
    let mut below = 0.0;
    for i in 1..xs.len() {
        let piece = 0.5 * (f[i] + f[i - 1]) * (xs[i] - xs[i - 1]);
        total += piece;
        if xs[i] <= t {
            below += piece;
        }
    }
    let log_mass = top + total.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    if log_mass < LOG_MASS_FLOOR {
        return Err(Error::Degenerate(format!(
            "selection probability below 1e-300 (log mass {log_mass:.1})"
        )));
    }
    Ok((below / total).clamp(0.0, 1.0))
}

fn plugin_mcmc(
    t: f64,
    m: f64,
    tau: f64,
    g: &RandomizationSpec,
    steps: usize,
    seed: u64,
) -> Result<PivotEstimate> {
    let problem = ConditionalProblem::simple_threshold(t, m, tau, Some(*g))?;
    let density = SelectiveDensity::new(&problem)?;
    let config = LangevinConfig {
        steps,
        metropolis: true,
        adapt: true,
        ..Default::default()
    };
    let mut rng = crate::stats::stream_rng(seed, 0);
    let mut ind = Vec::with_capacity(steps);
    langevin_run(&density, &density.initial_state(), &config, &mut rng, |x| {
        ind.push(if x[0] < t { 1.0 } else { 0.0 })
    })?;
    Ok(indicator_estimate(&ind))
}

/// Mean of a 0/1 chain with an ESS-based standard error.
pub(crate) fn indicator_estimate(ind: &[f64]) -> PivotEstimate {
    let p = crate::stats::mean(ind);
    let ess = effective_sample_size(ind).max(1.0);
    PivotEstimate::sampled(p, (p * (1.0 - p) / ess).sqrt())
}

fn check_data(y: &[f64]) -> Result<(f64, f64)> {
    if y.len() < 2 {
        return Err(Error::invalid("need at least two observations"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("data".into()));
    }
    let n = y.len() as f64;
    Ok((n.sqrt(), y.iter().sum::<f64>() / n))
}

/// √n(ȳ* − ȳ) for `draws` nonparametric bootstrap resamples.
fn bootstrap_deviations<R: Rng + ?Sized>(y: &[f64], draws: usize, rng: &mut R) -> Vec<f64> {
    let n = y.len();
    let sqrt_n = (n as f64).sqrt();
    let ybar = y.iter().sum::<f64>() / n as f64;
    (0..draws)
        .map(|_| {
            let s: f64 = (0..n).map(|_| y[rng.gen_range(0..n)]).sum();
            sqrt_n * (s / n as f64 - ybar)
        })
        .collect()
}

fn degenerate_warning(y: &[f64]) -> Option<String> {
    let first = y[0];
    y.iter().all(|&v| v == first).then(|| {
        "all observations are equal; the bootstrap distribution is a point mass".to_string()
    })
}

/// Σ 1{D_b ≤ √n(ȳ−μ)}·1{D_b > τ − √nμ} / Σ 1{D_b > τ − √nμ} over bootstrap
/// deviations D_b = √n(ȳ*_b − ȳ).
pub fn boot_pivot_nonrand<R: Rng + ?Sized>(
    y: &[f64],
    m: f64,
    tau: f64,
    draws: usize,
    rng: &mut R,
) -> Result<PivotEstimate> {
    let (sqrt_n, ybar) = check_data(y)?;
    if draws < 1000 {
        return Err(Error::invalid("at least 1000 bootstrap draws required"));
    }
    let t = sqrt_n * ybar;
    if t <= tau {
        return Err(Error::invalid(format!(
            "√n·ȳ = {t} did not pass the threshold τ = {tau}"
        )));
    }
    let d = bootstrap_deviations(y, draws, rng);
    let (mut num, mut den) = (0usize, 0usize);
    for &v in &d {
        if v + m > tau {
            den += 1;
            if v <= t - m {
                num += 1;
            }
        }
    }
    if den == 0 {
        return Err(Error::Degenerate(
            "selection event unreachable under the bootstrap".into(),
        ));
    }
    let p = num as f64 / den as f64;
    let mut est = PivotEstimate::sampled(p, (p * (1.0 - p) / den as f64).sqrt());
    est.warning = degenerate_warning(y);
    Ok(est)
}

/// Bootstrap deviations weighted by 1 − G(τ − D_b − √nμ).
pub fn weighted_boot_pivot<R: Rng + ?Sized>(
    y: &[f64],
    m: f64,
    tau: f64,
    g: &RandomizationSpec,
    draws: usize,
    rng: &mut R,
) -> Result<PivotEstimate> {
    let (sqrt_n, ybar) = check_data(y)?;
    if draws < 1000 {
        return Err(Error::invalid("at least 1000 bootstrap draws required"));
    }
    let t = sqrt_n * ybar;
    let d = bootstrap_deviations(y, draws, rng);
    let lw: Vec<f64> = d.iter().map(|&v| g.log_sf(tau - v - m)).collect();
    let top = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::Degenerate(
            "bootstrap selection weights underflow".into(),
        ));
    }
    let w: Vec<f64> = lw.iter().map(|v| (v - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let hits: Vec<f64> = d
        .iter()
        .map(|&v| if v <= t - m { 1.0 } else { 0.0 })
        .collect();
    let p = w.iter().zip(&hits).map(|(w, h)| w * h).sum::<f64>() / total;
    let var = w
        .iter()
        .zip(&hits)
        .map(|(w, h)| (w * (h - p)).powi(2))
        .sum::<f64>()
        / (total * total);
    let mut est = PivotEstimate::sampled(p, var.sqrt());
    est.warning = degenerate_warning(y);
    Ok(est)
}

/// Wild-bootstrap selective density on (z, α₁..αₙ):
/// ∏φ(αᵢ)·g(z − W − √nμ)·1{z > τ} with W = n^{-1/2} Σ (Yᵢ − μ)αᵢ.
#[derive(Debug, Clone)]
pub struct WildBootstrap {
    r: Vec<f64>,
    m: f64,
    tau: f64,
    g: RandomizationSpec,
    z_scale: f64,
}

impl WildBootstrap {
    pub fn new(y: &[f64], m: f64, tau: f64, g: &RandomizationSpec) -> Result<Self> {
        let (sqrt_n, _) = check_data(y)?;
        let mu = m / sqrt_n;
        let r: Vec<f64> = y.iter().map(|v| (v - mu) / sqrt_n).collect();
        let r2: f64 = r.iter().map(|v| v * v).sum();
        if r2 == 0.0 {
            return Err(Error::Degenerate(
                "centered data are all zero; the wild bootstrap is degenerate".into(),
            ));
        }
        Ok(Self {
            r,
            m,
            tau,
            g: *g,
            z_scale: (r2 + g.variance()).sqrt(),
        })
    }

    /// The bootstrap statistic W at a state.
    pub fn statistic(&self, x: &[f64]) -> f64 {
        self.r.iter().zip(&x[1..]).map(|(r, a)| r * a).sum()
    }

    pub fn initial_state(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.r.len() + 1];
        x[0] = self.tau.max(self.m) + self.z_scale;
        x
    }
}

impl LogDensity for WildBootstrap {
    fn dim(&self) -> usize {
        self.r.len() + 1
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        if !(x[0] > self.tau) {
            return f64::NEG_INFINITY;
        }
        let w = x[0] - self.statistic(x) - self.m;
        -0.5 * x[1..].iter().map(|a| a * a).sum::<f64>() + self.g.log_density_1d(w)
    }

    fn grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let w = x[0] - self.statistic(x) - self.m;
        let gw = self.g.grad_log_density_1d(w);
        grad[0] = gw;
        for ((g, a), r) in grad[1..].iter_mut().zip(&x[1..]).zip(&self.r) {
            *g = -a - gw * r;
        }
        self.log_density(x)
    }

    fn project(&self, x: &mut [f64]) {
        x[0] = x[0].max(self.tau + 1e-8 * self.tau.abs().max(1.0));
    }

    fn scales(&self) -> Vec<f64> {
        let mut s = vec![1.0; self.dim()];
        s[0] = self.z_scale;
        s
    }
}

/// Fraction of chain states with W ≤ √n(ȳ − μ), from a Metropolis-adjusted
/// Langevin chain on the wild-bootstrap density.
pub fn wild_boot_pivot<R: Rng + ?Sized>(
    y: &[f64],
    m: f64,
    tau: f64,
    g: &RandomizationSpec,
    steps: usize,
    rng: &mut R,
) -> Result<PivotEstimate> {
    let (sqrt_n, ybar) = check_data(y)?;
    let target = WildBootstrap::new(y, m, tau, g)?;
    let observed = sqrt_n * ybar - m;
    let config = LangevinConfig {
        steps,
        metropolis: true,
        adapt: true,
        ..Default::default()
    };
    let mut ind = Vec::with_capacity(steps);
    langevin_run(&target, &target.initial_state(), &config, rng, |x| {
        ind.push(if target.statistic(x) <= observed {
            1.0
        } else {
            0.0
        })
    })?;
    Ok(indicator_estimate(&ind))
}

/// Draws from the unconditional wild bootstrap: W = n^{-1/2} Σ (Yᵢ − μ)αᵢ.
pub fn wild_boot_unconditional<R: Rng + ?Sized>(
    y: &[f64],
    m: f64,
    draws: usize,
    rng: &mut R,
) -> Vec<f64> {
    let sqrt_n = (y.len() as f64).sqrt();
    let mu = m / sqrt_n;
    (0..draws)
        .map(|_| {
            y.iter()
                .map(|v| (v - mu) * rng.sample::<f64, _>(StandardNormal))
                .sum::<f64>()
                / sqrt_n
        })
        .collect()
}
