//! Replication studies: draw data from the selective law, compute pivots and
//! intervals, and summarize their calibration.

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{gen_synthetic, SyntheticSpec};
use crate::error::{Error, Result};
use crate::pipeline::{parse_randomization, run_two_stage, LambdaChoice, TwoStageConfig};
use crate::pivots::{
    boot_pivot_nonrand, invert_pivot, plugin_randomized_pivot, tg_pivot, two_sided,
    weighted_boot_pivot, wild_boot_pivot, Method, PivotEstimate, PluginMethod,
    DEFAULT_BOOTSTRAP_DRAWS, DEFAULT_CHAIN_STEPS,
};
use crate::randomization::RandomizationSpec;
use crate::stats::{ks_uniform, stream_rng, SessionRng};

/// Proposals allowed per replication when drawing selected data.
const SELECTION_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    #[default]
    Gaussian,
    Laplace,
    Uniform,
}

impl Noise {
    /// A unit-variance draw.
    fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Noise::Gaussian => rng.sample(StandardNormal),
            Noise::Laplace => {
                let u: f64 = rng.gen_range(-0.5..0.5);
                -u.signum() * (1.0 - 2.0 * u.abs()).ln() / std::f64::consts::SQRT_2
            }
            Noise::Uniform => 3f64.sqrt() * rng.gen_range(-1.0..1.0),
        }
    }
}

fn default_level() -> f64 {
    0.9
}

fn default_draws() -> usize {
    DEFAULT_BOOTSTRAP_DRAWS
}

fn default_chain_steps() -> usize {
    DEFAULT_CHAIN_STEPS
}

/// The one-sample problem: Y₁..Yₙ iid with mean μ and unit variance,
/// reported when √n·ȳ (+ ω) > τ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimpleScenario {
    pub n: usize,
    pub mean: f64,
    pub tau: f64,
    /// `family:scale`, e.g. `gaussian:1.0`; absent for a nonrandomized test.
    #[serde(default)]
    pub randomization: Option<String>,
    #[serde(default)]
    pub noise: Noise,
    pub methods: Vec<Method>,
    pub replications: usize,
    /// Overridden by the command line.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_draws")]
    pub bootstrap_draws: usize,
    #[serde(default = "default_chain_steps")]
    pub chain_steps: usize,
}

fn default_c() -> f64 {
    2.5
}

fn default_one() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

fn default_pipeline_steps() -> usize {
    TwoStageConfig::default().steps
}

fn default_lambda() -> LambdaChoice {
    LambdaChoice::Theory
}

/// Synthetic regression data through screening → randomized LASSO →
/// inference on the active features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoStageScenario {
    pub n: usize,
    pub p: usize,
    #[serde(default)]
    pub sparsity: usize,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "default_one")]
    pub noise_sd: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_one")]
    pub screen_randomization: f64,
    #[serde(default = "default_lambda")]
    pub lambda: LambdaChoice,
    #[serde(default = "default_true")]
    pub interactions: bool,
    #[serde(default)]
    pub lasso_randomization: Option<f64>,
    pub replications: usize,
    /// Overridden by the command line.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_pipeline_steps")]
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    Simple(SimpleScenario),
    TwoStage(TwoStageScenario),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let level_ok = |l: f64| l > 0.0 && l < 1.0;
        match self {
            Scenario::Simple(s) => {
                if s.n < 2 || s.replications == 0 || !level_ok(s.level) || s.methods.is_empty() {
                    return Err(Error::invalid(
                        "need n ≥ 2, replications ≥ 1, a level in (0, 1) and at least one method",
                    ));
                }
                if !s.mean.is_finite() || s.tau.is_nan() {
                    return Err(Error::invalid("mean must be finite and τ a number"));
                }
                let randomized = s
                    .randomization
                    .as_deref()
                    .map(parse_randomization)
                    .transpose()?
                    .is_some();
                for m in &s.methods {
                    match m {
                        Method::PluginRandomized | Method::BootWild | Method::BootWeighted
                            if !randomized =>
                        {
                            return Err(Error::invalid(format!(
                                "method {} needs a randomization",
                                m.name()
                            )))
                        }
                        Method::BootNonrand if randomized => {
                            return Err(Error::invalid(
                                "boot-nonrand is for nonrandomized scenarios",
                            ))
                        }
                        Method::McConditional => {
                            return Err(Error::invalid("mc-conditional is not a simulation method"))
                        }
                        _ => {}
                    }
                }
                if s.methods
                    .iter()
                    .any(|m| matches!(m, Method::BootNonrand | Method::BootWeighted))
                    && s.bootstrap_draws < 1000
                {
                    return Err(Error::invalid("at least 1000 bootstrap draws required"));
                }
                Ok(())
            }
            Scenario::TwoStage(s) => {
                if s.n < 2
                    || s.p == 0
                    || s.sparsity > s.p
                    || s.replications == 0
                    || !level_ok(s.level)
                {
                    return Err(Error::invalid(
                        "need n ≥ 2, p ≥ 1, sparsity ≤ p, replications ≥ 1 and a level in (0, 1)",
                    ));
                }
                if !(s.c > 0.0 && s.screen_randomization > 0.0 && s.noise_sd > 0.0) {
                    return Err(Error::invalid(
                        "c, the screening randomization and the noise sd must be positive",
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Scenario::Simple(s) => s.seed,
            Scenario::TwoStage(s) => s.seed,
        }
    }
}

/// One pivot for one target in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub replication: usize,
    pub method: String,
    pub target: String,
    pub estimate: f64,
    pub truth: f64,
    pub pivot: f64,
    pub pvalue: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub width: Option<f64>,
    pub covered: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub pivots: usize,
    pub ks_uniform: f64,
    pub coverage: f64,
    pub mean_width: Option<f64>,
}

/// Runs every replication; rows come back in replication order whatever the
/// thread count.
pub fn run_scenario(scenario: &Scenario) -> Result<Vec<ResultRow>> {
    scenario.validate()?;
    let reps = match scenario {
        Scenario::Simple(s) => s.replications,
        Scenario::TwoStage(s) => s.replications,
    };
    let per_rep: Vec<Result<Vec<ResultRow>>> = (0..reps)
        .into_par_iter()
        .map(|r| match scenario {
            Scenario::Simple(s) => simple_replication(s, r),
            Scenario::TwoStage(s) => two_stage_replication(s, r),
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_rep {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Draws data until the selection event occurs.
fn draw_selected(
    s: &SimpleScenario,
    g: Option<&RandomizationSpec>,
    rng: &mut SessionRng,
) -> Result<Vec<f64>> {
    let sqrt_n = (s.n as f64).sqrt();
    for _ in 0..SELECTION_BUDGET {
        let y: Vec<f64> = (0..s.n).map(|_| s.mean + s.noise.sample(rng)).collect();
        let omega = g.map_or(0.0, |g| g.sample_1d(rng));
        if y.iter().sum::<f64>() / sqrt_n + omega > s.tau {
            return Ok(y);
        }
    }
    Err(Error::BudgetExhausted {
        proposals: SELECTION_BUDGET,
        accepted: 0,
        rate: 0.0,
    })
}

fn simple_replication(s: &SimpleScenario, r: usize) -> Result<Vec<ResultRow>> {
    let g = s
        .randomization
        .as_deref()
        .map(parse_randomization)
        .transpose()?;
    let rep_seed = stream_rng(s.seed, r as u64).gen::<u64>();
    let y = draw_selected(s, g.as_ref(), &mut stream_rng(rep_seed, 0))?;
    let sqrt_n = (s.n as f64).sqrt();
    let t = y.iter().sum::<f64>() / sqrt_n;
    let m = sqrt_n * s.mean;
    let alpha = 1.0 - s.level;
    let mut rows = Vec::new();
    for (k, &method) in s.methods.iter().enumerate() {
        let start = Instant::now();
        // Common random numbers across the inversion grid keep sampled
        // pivots monotone in the parameter.
        let stream = 1 + k as u64;
        let crn = || stream_rng(rep_seed, stream);
        let (pivot, interval) = match method {
            Method::Tg => {
                // A randomized scenario can report t slightly below τ; the
                // TG pivot is then taken at the boundary.
                let t = t.max(s.tau);
                let f = |mm: f64| tg_pivot(t, mm, s.tau).map(PivotEstimate::exact);
                (f(m)?, Some(invert_pivot(f, t, 1.0, alpha)?))
            }
            Method::PluginRandomized => {
                let g = g.as_ref().expect("validated");
                let f = |mm: f64| plugin_randomized_pivot(t, mm, s.tau, g, PluginMethod::Grid);
                (f(m)?, Some(invert_pivot(f, t, 1.0, alpha)?))
            }
            Method::BootNonrand => {
                let f = |mm: f64| boot_pivot_nonrand(&y, mm, s.tau, s.bootstrap_draws, &mut crn());
                (f(m)?, Some(invert_pivot(f, t, 1.0, alpha)?))
            }
            Method::BootWeighted => {
                let g = g.as_ref().expect("validated");
                let f =
                    |mm: f64| weighted_boot_pivot(&y, mm, s.tau, g, s.bootstrap_draws, &mut crn());
                (f(m)?, Some(invert_pivot(f, t, 1.0, alpha)?))
            }
            Method::BootWild => {
                let g = g.as_ref().expect("validated");
                (
                    wild_boot_pivot(&y, m, s.tau, g, s.chain_steps, &mut crn())?,
                    None,
                )
            }
            Method::McConditional => unreachable!("rejected by validation"),
        };
        let runtime = start.elapsed().as_secs_f64() * 1e3;
        let (lower, upper) = match &interval {
            Some(i) => (Some(i.lower / sqrt_n), Some(i.upper / sqrt_n)),
            None => (None, None),
        };
        let covered = match (lower, upper) {
            (Some(lo), Some(hi)) => lo <= s.mean && s.mean <= hi,
            _ => pivot.value >= alpha / 2.0 && pivot.value <= 1.0 - alpha / 2.0,
        };
        rows.push(ResultRow {
            replication: r,
            method: method.name().to_string(),
            target: "mean".into(),
            estimate: t / sqrt_n,
            truth: s.mean,
            pivot: pivot.value,
            pvalue: two_sided(pivot.value),
            lower,
            upper,
            width: lower.zip(upper).map(|(a, b)| b - a),
            covered,
            runtime_ms: Some(runtime),
        });
    }
    Ok(rows)
}

fn two_stage_replication(s: &TwoStageScenario, r: usize) -> Result<Vec<ResultRow>> {
    let rep_seed = stream_rng(s.seed, r as u64).gen::<u64>();
    let spec = SyntheticSpec {
        n: s.n,
        p: s.p,
        sparsity: s.sparsity,
        amplitude: s.amplitude,
        noise_sd: s.noise_sd,
        rho: s.rho,
    };
    let (ds, beta) = gen_synthetic(&spec, rep_seed)?;
    let mu = &ds.x * DVector::from_vec(beta);
    let cfg = TwoStageConfig {
        c: s.c,
        screen_randomization: s.screen_randomization,
        lambda: s.lambda,
        interactions: s.interactions,
        lasso_randomization: s.lasso_randomization,
        level: s.level,
        steps: s.steps,
    };
    let start = Instant::now();
    let res = run_two_stage(&ds, &cfg, Some(&mu), rep_seed)?;
    let runtime = start.elapsed().as_secs_f64() * 1e3 / res.records.len().max(1) as f64;
    Ok(res
        .records
        .iter()
        .map(|rec| ResultRow {
            replication: r,
            method: rec.method.name().to_string(),
            target: rec.target.clone(),
            estimate: rec.estimate,
            truth: rec.null_value,
            pivot: rec.pivot,
            pvalue: rec.pvalue,
            lower: Some(rec.lower),
            upper: Some(rec.upper),
            width: Some(rec.upper - rec.lower),
            covered: rec.lower <= rec.null_value && rec.null_value <= rec.upper,
            runtime_ms: Some(runtime),
        })
        .collect())
}

/// KS distance to uniform, coverage and mean finite width per method, in
/// order of first appearance.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let sel: Vec<&ResultRow> = rows.iter().filter(|r| r.method == m).collect();
            let pivots: Vec<f64> = sel.iter().map(|r| r.pivot).collect();
            let widths: Vec<f64> = sel
                .iter()
                .filter_map(|r| r.width)
                .filter(|w| w.is_finite())
                .collect();
            SummaryRow {
                method: m.to_string(),
                pivots: sel.len(),
                ks_uniform: ks_uniform(&pivots),
                coverage: sel.iter().filter(|r| r.covered).count() as f64 / sel.len() as f64,
                mean_width: (!widths.is_empty())
                    .then(|| widths.iter().sum::<f64>() / widths.len() as f64),
            }
        })
        .collect()
}

/// Writes rows as CSV; the runtime column only when `timing` is set, so
/// that untimed output is byte-identical across runs.
pub fn write_results<W: std::io::Write>(rows: &[ResultRow], writer: W, timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    for r in rows {
        let mut r = r.clone();
        if !timing {
            r.runtime_ms = None;
        }
        w.serialize(&r).map_err(csv_err)?;
    }
    if rows.is_empty() {
        let mut header = vec![
            "replication",
            "method",
            "target",
            "estimate",
            "truth",
            "pivot",
            "pvalue",
            "lower",
            "upper",
            "width",
            "covered",
        ];
        if timing {
            header.push("runtime_ms");
        }
        w.write_record(header).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: std::io::Write>(summary: &[SummaryRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in summary {
        w.serialize(s)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: std::io::Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(reader);
    rd.deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Csv {
                row: i + 2,
                column: String::new(),
                message: e.to_string(),
            })
        })
        .collect()
}
