//! Inference for the targets of a recorded session.

use nalgebra::{DMatrix, DVector};

use super::inversion::{gaussian_reweight, invert_pivot};
use super::report::{two_sided, InferenceRecord, Method, PivotEstimate};
use super::simple::{plugin_randomized_pivot, tg_pivot, PluginMethod, DEFAULT_CHAIN_STEPS};
use crate::dagdag::{Dag, ModelFamily, ModelSpec, Target};
use crate::error::{Error, Result};
use crate::queries::QuerySpec;
use crate::randomization::RandomizationSpec;
use crate::sampler::{
    langevin_sample, ConditionalProblem, LangevinConfig, LogDensity, ProblemOptions,
    SelectiveDensity,
};
use crate::stats::stream_rng;

#[derive(Debug, Clone)]
pub struct InferOptions {
    /// Confidence level of the intervals.
    pub level: f64,
    pub steps: usize,
    pub seed: u64,
    /// The chain is drawn with reference sd inflated by this factor around
    /// the observed estimate, then reweighted to each parameter value.
    pub reference_inflation: f64,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            level: 0.9,
            steps: DEFAULT_CHAIN_STEPS,
            seed: 0,
            reference_inflation: 1.5,
        }
    }
}

/// One record per target coordinate of `model`.
pub fn infer_session(
    dag: &Dag,
    model: &ModelSpec,
    opts: &InferOptions,
) -> Result<Vec<InferenceRecord>> {
    if model.target.dimension() == 0 {
        return Err(Error::EmptySelection);
    }
    (0..model.target.dimension())
        .map(|k| infer_target(dag, model, k, opts))
        .collect()
}

fn target_label(dag: &Dag, model: &ModelSpec, k: usize) -> String {
    match &model.target {
        Target::Mean => "mean".to_string(),
        Target::Coefficients { features } => {
            let names = dag
                .dataset
                .as_ref()
                .map(|d| d.columns.clone())
                .unwrap_or_default();
            features[k].label(&names)
        }
    }
}

/// Inference for coordinate `k` of the target.
pub fn infer_target(
    dag: &Dag,
    model: &ModelSpec,
    k: usize,
    opts: &InferOptions,
) -> Result<InferenceRecord> {
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::invalid("level must be in (0, 1)"));
    }
    let problem = ConditionalProblem::from_dag(
        dag,
        model,
        &ProblemOptions {
            focus: Some(k),
            seed: opts.seed,
            ..Default::default()
        },
    )?;
    let feature = match &model.target {
        Target::Coefficients { features } => Some(features[k]),
        Target::Mean => None,
    };
    // Mean targets are carried on the √n·ȳ scale internally.
    let unit = match model.target {
        Target::Mean => 1.0 / (problem_n(dag)? as f64).sqrt(),
        Target::Coefficients { .. } => 1.0,
    };
    let est = problem.observed[0];
    let null = problem.mean[0];
    let sd = problem.cov[(0, 0)].sqrt();
    let alpha = 1.0 - opts.level;

    let closed = closed_form_threshold(&problem, model);
    let (method, at_null, interval) = match closed {
        Some((tau, g)) => {
            // Standardize to unit variance.
            let (t, tau) = (est / sd, tau / sd);
            let pivot = |m: f64| -> Result<PivotEstimate> {
                match &g {
                    None => tg_pivot(t, m / sd, tau).map(PivotEstimate::exact),
                    Some(g) => plugin_randomized_pivot(t, m / sd, tau, g, PluginMethod::Grid),
                }
            };
            let method = if g.is_some() {
                Method::PluginRandomized
            } else {
                Method::Tg
            };
            (method, pivot(null)?, invert_pivot(pivot, est, sd, alpha)?)
        }
        None => {
            let kappa = opts.reference_inflation;
            let reference = problem.with_reference(
                DVector::from_element(1, est),
                DMatrix::from_element(1, 1, (kappa * sd).powi(2)),
            )?;
            let chain = sample_data_coordinate(&reference, opts.steps, opts.seed, k as u64)?;
            let var = sd * sd;
            let ref_var = (kappa * sd).powi(2);
            let pivot = |m: f64| -> Result<PivotEstimate> {
                Ok(gaussian_reweight(&chain, est, ref_var, m, var)?.fraction_below(&chain, est))
            };
            let at_null = match pivot(null) {
                Ok(p) => p,
                Err(Error::LowEffectiveSampleSize { .. }) => {
                    let direct = sample_data_coordinate(
                        &problem,
                        opts.steps,
                        opts.seed,
                        1_000_000 + k as u64,
                    )?;
                    super::simple::indicator_estimate(
                        &direct
                            .iter()
                            .map(|&v| if v < est { 1.0 } else { 0.0 })
                            .collect::<Vec<_>>(),
                    )
                }
                Err(e) => return Err(e),
            };
            (
                Method::PluginRandomized,
                at_null,
                invert_pivot(pivot, est, sd, alpha)?,
            )
        }
    };
    Ok(InferenceRecord {
        stage: dag.stage(),
        target: target_label(dag, model, k),
        feature,
        method,
        estimate: est * unit,
        null_value: null * unit,
        pivot: at_null.value,
        pvalue: two_sided(at_null.value),
        level: opts.level,
        lower: interval.lower * unit,
        upper: interval.upper * unit,
        mc_se: at_null.mc_se,
        seed: opts.seed,
    })
}

fn problem_n(dag: &Dag) -> Result<usize> {
    let q = dag
        .query_nodes()
        .next()
        .map(|q| dag.resolve_inputs(q.id))
        .transpose()?
        .map(|i| i.y.len());
    match q {
        Some(n) => Ok(n),
        None => dag
            .nodes()
            .iter()
            .find_map(|n| match n {
                crate::dagdag::Node::Data(d) => match d.shape {
                    crate::dagdag::Shape::Vector { len } => Some(len),
                    _ => None,
                },
                _ => None,
            })
            .ok_or_else(|| Error::InvalidDag("no response vector".into())),
    }
}

/// A Gaussian-mean session with a single threshold query on the target
/// itself has a closed-form (TG) or one-dimensional (plug-in) pivot. Returns
/// τ and the randomization rescaled to unit data variance.
fn closed_form_threshold(
    problem: &ConditionalProblem,
    model: &ModelSpec,
) -> Option<(f64, Option<RandomizationSpec>)> {
    if model.family != ModelFamily::GaussianMean || problem.blocks.len() != 1 {
        return None;
    }
    let b = &problem.blocks[0];
    let QuerySpec::Threshold(q) = &b.spec else {
        return None;
    };
    if b.outcome.is_empty() || (b.gamma[(0, 0)] - 1.0).abs() > 1e-12 || b.nuisance[0].abs() > 1e-9 {
        return None;
    }
    let sd = problem.cov[(0, 0)].sqrt();
    match &q.randomization {
        None => Some((q.tau, None)),
        Some(g) => RandomizationSpec::new(g.family(), g.scale() / sd, 1)
            .ok()
            .map(|g| (q.tau, Some(g))),
    }
}

/// Metropolis-adjusted Langevin draws of the data coordinate of a focused problem.
pub fn sample_data_coordinate(
    problem: &ConditionalProblem,
    steps: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<f64>> {
    if problem
        .blocks
        .iter()
        .any(|b| b.spec.randomization().is_none())
    {
        return Err(Error::Unsupported(
            "Monte Carlo inference after a query without randomization".into(),
        ));
    }
    let density = SelectiveDensity::collapsed(problem)?;
    debug_assert_eq!(density.data_dim(), 1);
    let config = LangevinConfig {
        steps,
        record: Some(vec![0]),
        metropolis: true,
        adapt: true,
        ..Default::default()
    };
    let mut rng = stream_rng(seed, stream);
    let init = density.initial_state();
    if !density.log_density(&init).is_finite() {
        return Err(Error::numerical(
            "initial state has zero selective density",
            &init,
        ));
    }
    Ok(langevin_sample(&density, &init, &config, &mut rng)?.values)
}
