//! Step-by-step analysis sessions and the two-stage screening → LASSO
//! pipeline built on them.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dagdag::{Dag, ModelFamily, ModelSpec, Node, NodeId, Shape, Target};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::pivots::{infer_session, infer_target, InferOptions, InferenceRecord};
use crate::queries::{
    build_design, default_randomization_scale, default_ridge_eps, expand_interactions,
    main_effects, theory_lambda, Feature, LassoQuery, MarginalScreenQuery, QuerySpec,
    ThresholdQuery,
};
use crate::randomization::{Family, RandomizationSpec};
use crate::stats::stream_rng;

/// Draws used for the theory λ.
pub const THEORY_LAMBDA_DRAWS: usize = 200;

/// σ̂ from the residuals of an OLS fit with intercept, or the sample sd of y
/// when there are too few rows for that.
pub fn noise_estimate(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let (n, p) = (x.nrows(), x.ncols());
    if n < 2 {
        return Err(Error::invalid(
            "need at least two observations to estimate the noise",
        ));
    }
    let ybar = y.mean();
    let centered = y.map(|v| v - ybar);
    let sd_y = (centered.norm_squared() / (n - 1) as f64).sqrt();
    if n <= p + 1 || p == 0 {
        return positive(sd_y);
    }
    let design = match build_design(x, &main_effects(p)) {
        Ok(d) => d,
        Err(_) => return positive(sd_y),
    };
    let Some(beta) = design.clone().svd(true, true).solve(&centered, 1e-10).ok() else {
        return positive(sd_y);
    };
    let resid = &centered - &design * beta;
    positive((resid.norm_squared() / (n - p - 1) as f64).sqrt())
}

fn positive(s: f64) -> Result<f64> {
    if s > 0.0 && s.is_finite() {
        Ok(s)
    } else {
        Err(Error::Degenerate("the response has zero variance".into()))
    }
}

/// Parses `family:scale`, e.g. `gaussian:1.0`.
pub fn parse_randomization(text: &str) -> Result<RandomizationSpec> {
    let (family, scale) = text.split_once(':').ok_or_else(|| {
        Error::invalid(format!(
            "randomization '{text}' is not of the form family:scale"
        ))
    })?;
    let family = match family {
        "gaussian" => Family::Gaussian,
        "laplace" => Family::Laplace,
        "logistic" => Family::Logistic,
        other => {
            return Err(Error::invalid(format!(
                "unknown randomization family '{other}'"
            )))
        }
    };
    let scale: f64 = scale
        .parse()
        .map_err(|_| Error::invalid(format!("randomization scale '{scale}' is not a number")))?;
    RandomizationSpec::new(family, scale, 1)
}

/// Written as `"theory"` or a number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    Theory,
    Fixed(f64),
}

impl Serialize for LambdaChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LambdaChoice::Theory => s.serialize_str("theory"),
            LambdaChoice::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for LambdaChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(LambdaChoice::Fixed(v)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::str::FromStr for LambdaChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "theory" {
            return Ok(LambdaChoice::Theory);
        }
        s.parse()
            .map(LambdaChoice::Fixed)
            .map_err(|_| Error::invalid(format!("λ must be 'theory' or a number, got '{s}'")))
    }
}

/// A session DAG together with its data nodes.
#[derive(Debug, Clone)]
pub struct Session {
    pub dag: Dag,
    pub design: Option<NodeId>,
    pub response: NodeId,
}

impl Session {
    /// New session on `ds` with noise scale `sigma` (estimated when absent).
    pub fn new(
        ds: &Dataset,
        family: ModelFamily,
        sigma: Option<f64>,
        source: Option<String>,
    ) -> Result<Self> {
        let sigma = match sigma {
            Some(s) => s,
            None if family == ModelFamily::GaussianMean => {
                let n = ds.n() as f64;
                let ybar = ds.y.mean();
                positive((ds.y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())?
            }
            None => noise_estimate(&ds.x, &ds.y)?,
        };
        let mut dag = Dag::new();
        let design = if ds.p() > 0 {
            Some(dag.add_matrix(&ds.x, Some("X".into()))?)
        } else {
            None
        };
        let response = dag.add_vector(ds.y.as_slice(), Some(ds.response.clone()))?;
        let target = match family {
            ModelFamily::GaussianMean => Target::Mean,
            _ => Target::Coefficients {
                features: Vec::new(),
            },
        };
        let model = ModelSpec {
            family,
            noise_scale: sigma,
            mean: 0.0,
            coefficients: None,
            target,
        };
        model.validate(usize::MAX)?;
        dag.model = Some(model);
        dag.dataset = Some(ds.record(source));
        Ok(Self {
            dag,
            design,
            response,
        })
    }

    /// Recovers the data nodes of a loaded session.
    pub fn from_dag(dag: Dag) -> Result<Self> {
        let mut design = None;
        let mut response = None;
        for node in dag.nodes() {
            if let Node::Data(d) = node {
                match d.shape {
                    Shape::Matrix { .. } if design.is_none() => design = Some(d.id),
                    Shape::Vector { .. } if response.is_none() => response = Some(d.id),
                    _ => {}
                }
            }
        }
        let response =
            response.ok_or_else(|| Error::InvalidDag("session has no response vector".into()))?;
        if dag.model.is_none() {
            return Err(Error::InvalidDag("session has no model".into()));
        }
        Ok(Self {
            dag,
            design,
            response,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        self.dag
            .model
            .as_ref()
            .expect("sessions always carry a model")
    }

    fn sigma(&self) -> f64 {
        self.model().noise_scale
    }

    fn x(&self) -> Result<DMatrix<f64>> {
        let id = self
            .design
            .ok_or_else(|| Error::invalid("this query needs a design matrix"))?;
        self.dag.matrix(id)
    }

    fn last_query(&self) -> Option<NodeId> {
        self.dag.query_nodes().last().map(|q| q.id)
    }

    fn parents(&self) -> Vec<NodeId> {
        let mut p: Vec<NodeId> = self.design.into_iter().collect();
        p.push(self.response);
        p.extend(self.last_query());
        p
    }

    fn set_target(&mut self, features: Vec<Feature>) {
        let model = self
            .dag
            .model
            .as_mut()
            .expect("sessions always carry a model");
        if model.family != ModelFamily::GaussianMean {
            model.target = Target::Coefficients { features };
            model.coefficients = None;
        }
    }

    /// One-sided test of the mean, √n·ȳ (+ ω) > τ.
    pub fn threshold(
        &mut self,
        tau: f64,
        randomization: Option<RandomizationSpec>,
        seed: u64,
    ) -> Result<bool> {
        if self.model().family != ModelFamily::GaussianMean {
            return Err(Error::invalid(
                "the threshold query is for gaussian-mean sessions",
            ));
        }
        let spec = QuerySpec::Threshold(ThresholdQuery::new(tau, randomization)?);
        let parents = self.parents();
        let id = self.dag.run_query(&parents, spec, seed)?;
        Ok(!self.dag.query_node(id)?.outcome.selected.is_empty())
    }

    /// Marginal screening at threshold `c` over the main effects. Returns E₁.
    pub fn screen(
        &mut self,
        c: f64,
        randomization: Option<RandomizationSpec>,
        seed: u64,
    ) -> Result<Vec<usize>> {
        let p = self.x()?.ncols();
        let randomization = randomization.map(|r| r.with_dimension(p)).transpose()?;
        let spec = QuerySpec::MarginalScreen(MarginalScreenQuery::new(
            c,
            randomization,
            vec![self.sigma(); p],
        )?);
        let parents = self.parents();
        let id = self.dag.run_query(&parents, spec, seed)?;
        let selected = self.dag.query_node(id)?.outcome.selected.clone();
        self.set_target(selected.iter().map(|&j| Feature::Main(j)).collect());
        Ok(selected)
    }

    /// The most recent screening selection, if any.
    pub fn screened(&self) -> Option<Vec<usize>> {
        self.dag
            .query_nodes()
            .filter(|q| matches!(q.spec, QuerySpec::MarginalScreen(_)))
            .last()
            .map(|q| q.outcome.selected.clone())
    }

    /// Randomized LASSO over the screened columns (with their pairwise
    /// interactions if asked), or over every column when nothing was
    /// screened. `randomization_scale` defaults to 0.5·σ̂·√(mean diag XᵀX).
    /// Returns the active features.
    pub fn lasso(
        &mut self,
        lambda: LambdaChoice,
        interactions: bool,
        randomization_scale: Option<f64>,
        seed: u64,
    ) -> Result<Vec<Feature>> {
        let x = self.x()?;
        let features = match (self.screened(), interactions) {
            (Some(e), _) if e.is_empty() => return Err(Error::EmptySelection),
            (Some(e), true) => expand_interactions(&x, &e)?.1,
            (Some(e), false) => e.iter().map(|&j| Feature::Main(j)).collect(),
            (None, true) => expand_interactions(&x, &(0..x.ncols()).collect::<Vec<_>>())?.1,
            (None, false) => main_effects(x.ncols()),
        };
        let design = build_design(&x, &features)?;
        let sigma = self.sigma();
        let lam = match lambda {
            LambdaChoice::Theory => theory_lambda(
                &design,
                sigma,
                THEORY_LAMBDA_DRAWS,
                &mut stream_rng(seed, 1),
            ),
            LambdaChoice::Fixed(v) => v,
        };
        let scale =
            randomization_scale.unwrap_or_else(|| default_randomization_scale(&design, sigma));
        let randomization = RandomizationSpec::gaussian(scale)?.with_dimension(features.len())?;
        let query = LassoQuery::new(lam, default_ridge_eps(&design), Some(randomization))?
            .with_features(features.clone());
        let parents = self.parents();
        let id = self
            .dag
            .run_query(&parents, QuerySpec::Lasso(query), seed)?;
        let active: Vec<Feature> = self
            .dag
            .query_node(id)?
            .outcome
            .selected
            .iter()
            .map(|&j| features[j])
            .collect();
        self.set_target(active.clone());
        Ok(active)
    }

    /// Inference for every coordinate of the current target, appended to the
    /// session record.
    pub fn infer(&mut self, opts: &InferOptions) -> Result<Vec<InferenceRecord>> {
        let model = self.model().clone();
        let records = infer_session(&self.dag, &model, opts)?;
        self.dag.inference.extend(records.iter().cloned());
        Ok(records)
    }

    /// Labels of the target coordinates, in order.
    pub fn target_labels(&self) -> Vec<String> {
        let names = self
            .dag
            .dataset
            .as_ref()
            .map(|d| d.columns.clone())
            .unwrap_or_default();
        match &self.model().target {
            Target::Mean => vec!["mean".into()],
            Target::Coefficients { features } => features.iter().map(|f| f.label(&names)).collect(),
        }
    }

    /// Like [`Session::infer`], for the chosen coordinates only.
    pub fn infer_targets(
        &mut self,
        targets: &[usize],
        opts: &InferOptions,
    ) -> Result<Vec<InferenceRecord>> {
        let model = self.model().clone();
        let dim = model.target.dimension();
        if dim == 0 {
            return Err(Error::EmptySelection);
        }
        if let Some(&k) = targets.iter().find(|&&k| k >= dim) {
            return Err(Error::invalid(format!(
                "target {k} out of range; the target has {dim} coordinates"
            )));
        }
        let records = targets
            .iter()
            .map(|&k| infer_target(&self.dag, &model, k, opts))
            .collect::<Result<Vec<_>>>()?;
        self.dag.inference.extend(records.iter().cloned());
        Ok(records)
    }

    /// Replaces the hypothesized values of the target.
    pub fn set_null(&mut self, values: Vec<f64>) -> Result<()> {
        let model = self
            .dag
            .model
            .as_mut()
            .expect("sessions always carry a model");
        match model.target {
            Target::Mean => {
                let [m] = values[..] else {
                    return Err(Error::invalid("a mean target takes one hypothesized value"));
                };
                model.mean = m;
            }
            Target::Coefficients { .. } => model.coefficients = Some(values),
        }
        model.validate(usize::MAX)
    }
}

/// Settings of the two-stage analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageConfig {
    pub c: f64,
    pub screen_randomization: f64,
    pub lambda: LambdaChoice,
    pub interactions: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lasso_randomization: Option<f64>,
    pub level: f64,
    pub steps: usize,
}

impl Default for TwoStageConfig {
    fn default() -> Self {
        Self {
            c: 2.5,
            screen_randomization: 1.0,
            lambda: LambdaChoice::Theory,
            interactions: true,
            lasso_randomization: None,
            level: 0.9,
            steps: 20_000,
        }
    }
}

/// The session and its reports. `records` is empty when a stage selected
/// nothing.
#[derive(Debug, Clone)]
pub struct TwoStageResult {
    pub session: Session,
    pub screened: Vec<usize>,
    pub active: Vec<Feature>,
    pub records: Vec<InferenceRecord>,
}

/// Screening, then the randomized LASSO on the survivors, then inference for
/// the LASSO's active features. `truth`, when given, maps the raw-data mean
/// E[y] to the hypothesized target values, so pivots are evaluated at the
/// truth.
pub fn run_two_stage(
    ds: &Dataset,
    cfg: &TwoStageConfig,
    truth: Option<&DVector<f64>>,
    seed: u64,
) -> Result<TwoStageResult> {
    let mut seeds = stream_rng(seed, 0);
    let mut session = Session::new(ds, ModelFamily::GaussianRegression, None, None)?;
    let screen_rand = RandomizationSpec::gaussian(cfg.screen_randomization)?;
    let screened = session.screen(cfg.c, Some(screen_rand), seeds.gen())?;
    let empty = |session| TwoStageResult {
        session,
        screened: screened.clone(),
        active: Vec::new(),
        records: Vec::new(),
    };
    if screened.is_empty() {
        return Ok(empty(session));
    }
    let active = session.lasso(
        cfg.lambda,
        cfg.interactions,
        cfg.lasso_randomization,
        seeds.gen(),
    )?;
    if active.is_empty() {
        return Ok(empty(session));
    }
    if let Some(mu) = truth {
        session.set_null(population_coefficients(&ds.x, &active, mu)?)?;
    }
    let opts = InferOptions {
        level: cfg.level,
        steps: cfg.steps,
        seed: seeds.gen(),
        ..Default::default()
    };
    let records = session.infer(&opts)?;
    Ok(TwoStageResult {
        session,
        screened,
        active,
        records,
    })
}

/// Coefficients of the projection of `mu` onto the standardized features.
pub fn population_coefficients(
    x: &DMatrix<f64>,
    features: &[Feature],
    mu: &DVector<f64>,
) -> Result<Vec<f64>> {
    let design = build_design(x, features)?;
    let gram = design.tr_mul(&design);
    let rhs = design.tr_mul(mu);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Degenerate("selected features are collinear".into()))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}
