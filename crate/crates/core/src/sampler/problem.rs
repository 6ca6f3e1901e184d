//! The conditional problem behind a session: a Gaussian target estimate θ̂
//! and, per query, the affine map θ̂ ↦ Γθ̂ + N giving the query's statistic
//! with the nuisance part N held fixed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dagdag::{query_design, Dag, ModelFamily, ModelSpec, Node, NodeId, Shape, Target};
use crate::error::{Error, Result};
use crate::queries::{build_design, Aux, QueryOutcome, QuerySpec, ThresholdQuery};
use crate::randomization::RandomizationSpec;
use crate::stats::stream_rng;

/// Proposals per oracle chunk. Chunk `k` always uses RNG stream `k`, so the
/// draws do not depend on the thread count.
const ORACLE_CHUNK: u64 = 4096;
pub const DEFAULT_ORACLE_BUDGET: u64 = 100_000_000;

/// T = Γθ̂ + N with Γ = Cov(T, θ̂)·Var(θ̂)⁻¹.
pub fn clt_decompose(
    t: &DVector<f64>,
    theta: &DVector<f64>,
    cov_t_theta: &DMatrix<f64>,
    var_theta: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let d = theta.len();
    if var_theta.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: var_theta.nrows(),
        });
    }
    if cov_t_theta.shape() != (t.len(), d) {
        return Err(Error::DimensionMismatch {
            expected: t.len(),
            found: cov_t_theta.nrows(),
        });
    }
    let chol = var_theta
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("variance of the target estimate is singular".into()))?;
    let gamma = chol.solve(&cov_t_theta.transpose()).transpose();
    let nuisance = t - &gamma * theta;
    Ok((gamma, nuisance))
}

/// Cov(Ay, By) and Var(By) for y ~ N(·, σ²I).
pub fn gaussian_covariances(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let s2 = sigma * sigma;
    (a * b.transpose() * s2, b * b.transpose() * s2)
}

/// Pairs-bootstrap estimates of Cov(T, θ̂) and Var(θ̂). `stat` maps a vector
/// of resampled row indices to the stacked vector (T; θ̂), with T of length
/// `t_dim`.
pub fn pairs_bootstrap_covariances<F>(
    n: usize,
    t_dim: usize,
    stat: F,
    draws: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)>
where
    F: Fn(&[usize]) -> Result<DVector<f64>> + Sync,
{
    if draws < 2 || n == 0 {
        return Err(Error::invalid(
            "bootstrap needs at least two draws and one row",
        ));
    }
    let samples: Vec<DVector<f64>> = (0..draws as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b);
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            stat(&idx)
        })
        .collect::<Result<_>>()?;
    let k = samples[0].len();
    if k <= t_dim {
        return Err(Error::invalid("bootstrap statistic has no target part"));
    }
    let mean = samples.iter().fold(DVector::zeros(k), |acc, s| acc + s) / draws as f64;
    let mut cov = DMatrix::zeros(k, k);
    for s in &samples {
        let c = s - &mean;
        cov += &c * c.transpose();
    }
    cov /= (draws - 1) as f64;
    let d = k - t_dim;
    Ok((
        cov.view((0, t_dim), (t_dim, d)).into_owned(),
        cov.view((t_dim, t_dim), (d, d)).into_owned(),
    ))
}

/// One recorded query, expressed in terms of the target estimate.
#[derive(Debug, Clone)]
pub struct QueryBlock {
    pub node: Option<NodeId>,
    pub spec: QuerySpec,
    pub outcome: QueryOutcome,
    pub gamma: DMatrix<f64>,
    pub nuisance: DVector<f64>,
    /// XᵀX of the query's design, for the LASSO.
    pub gram: Option<DMatrix<f64>>,
}

impl QueryBlock {
    pub fn stat_dim(&self) -> usize {
        self.nuisance.len()
    }

    pub fn statistic(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.gamma * theta + &self.nuisance
    }

    /// Whether the query, run at statistic `s` with randomization `omega`,
    /// reproduces the recorded selection event.
    pub fn reproduces(&self, s: &[f64], omega: &[f64]) -> Result<bool> {
        let out = match &self.spec {
            QuerySpec::Threshold(q) => q.solve_stat(s[0], omega[0]),
            QuerySpec::MarginalScreen(q) => match q.solve_stat(s, omega) {
                Ok(o) => o,
                Err(Error::Tie { .. }) => return Ok(false),
                Err(e) => return Err(e),
            },
            QuerySpec::Lasso(q) => {
                let gram = self
                    .gram
                    .as_ref()
                    .expect("lasso block carries its Gram matrix");
                q.solve_stat(gram, s, omega)?.1
            }
        };
        Ok(out.same_event(&self.outcome))
    }

    fn draw_omega<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        match self.spec.randomization() {
            Some(g) => out.extend((0..self.stat_dim()).map(|_| g.sample_1d(rng))),
            None => out.resize(self.stat_dim(), 0.0),
        }
    }
}

/// Options for [`ConditionalProblem::from_dag`].
#[derive(Debug, Clone)]
pub struct ProblemOptions {
    /// Restrict the target to one coordinate; the rest is conditioned on.
    pub focus: Option<usize>,
    /// Resamples for the empirical-bootstrap family.
    pub bootstrap_draws: usize,
    pub seed: u64,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        Self {
            focus: None,
            bootstrap_draws: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConditionalProblem {
    /// Mean of θ̂ under the model (the null value for pivots).
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub observed: DVector<f64>,
    pub blocks: Vec<QueryBlock>,
    chol_l: DMatrix<f64>,
}

impl ConditionalProblem {
    pub fn new(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        observed: DVector<f64>,
        blocks: Vec<QueryBlock>,
    ) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) || observed.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: observed.len(),
            });
        }
        for b in &blocks {
            if b.gamma.shape() != (b.stat_dim(), d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: b.gamma.ncols(),
                });
            }
        }
        let chol = cov.clone().cholesky().ok_or_else(|| {
            Error::Degenerate("variance of the target estimate is singular".into())
        })?;
        Ok(Self {
            mean,
            cov,
            observed,
            blocks,
            chol_l: chol.l(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The same problem under a different reference law for θ̂.
    pub fn with_reference(&self, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::new(mean, cov, self.observed.clone(), self.blocks.clone())
    }

    /// Z ~ N(m, 1) selected by Z + ω > τ, observed at `t`.
    pub fn simple_threshold(
        t: f64,
        m: f64,
        tau: f64,
        randomization: Option<RandomizationSpec>,
    ) -> Result<Self> {
        let q = ThresholdQuery::new(tau, randomization)?;
        let outcome = QueryOutcome {
            selected: vec![0],
            signs: vec![1],
            aux: Aux::Threshold {
                z: t.max(tau) + 1.0,
            },
        };
        let block = QueryBlock {
            node: None,
            spec: QuerySpec::Threshold(q),
            outcome,
            gamma: DMatrix::from_element(1, 1, 1.0),
            nuisance: DVector::zeros(1),
            gram: None,
        };
        Self::new(
            DVector::from_element(1, m),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, t),
            vec![block],
        )
    }

    /// Builds the problem for a recorded session under `model`.
    pub fn from_dag(dag: &Dag, model: &ModelSpec, opts: &ProblemOptions) -> Result<Self> {
        let (response, design) = session_inputs(dag)?;
        let y = dag.vector(response)?;
        let n = y.len();
        let x = design.map(|d| dag.matrix(d)).transpose()?;
        model.validate(n)?;

        // Target map θ̂ = B y (or OLS on resampled rows for the bootstrap).
        let sqrt_n = (n as f64).sqrt();
        let (b_full, x_m, null_full) = match &model.target {
            Target::Mean => (
                DMatrix::from_element(1, n, 1.0 / sqrt_n),
                None,
                DVector::from_element(1, sqrt_n * model.mean),
            ),
            Target::Coefficients { features } => {
                let x = x.as_ref().ok_or_else(|| {
                    Error::InvalidDag("coefficient targets need a design matrix".into())
                })?;
                let xm = build_design(x, features)?;
                let inv = (xm.tr_mul(&xm))
                    .try_inverse()
                    .ok_or_else(|| Error::Degenerate("target design is rank deficient".into()))?;
                (
                    &inv * xm.transpose(),
                    Some(xm),
                    DVector::from_vec(model.null_coefficients()),
                )
            }
        };
        let (b, null, focus_row) = match opts.focus {
            None => (b_full, null_full, None),
            Some(k) if k < b_full.nrows() => (
                b_full.rows(k, 1).into_owned(),
                DVector::from_element(1, null_full[k]),
                Some(k),
            ),
            Some(k) => return Err(Error::invalid(format!("focus {k} out of range"))),
        };
        let observed = &b * &y;

        // Statistic maps S_j = A_j y.
        let mut maps = Vec::new();
        for q in dag.query_nodes() {
            let a = match &q.spec {
                QuerySpec::Threshold(_) => DMatrix::from_element(1, n, 1.0 / sqrt_n),
                QuerySpec::MarginalScreen(s) => {
                    let design = query_design(&q.spec, need(&x)?)?;
                    let scales = s.column_scales(&design)?;
                    let mut a = design.transpose();
                    for (mut row, d) in a.row_iter_mut().zip(scales) {
                        row *= d;
                    }
                    a
                }
                QuerySpec::Lasso(_) => query_design(&q.spec, need(&x)?)?.transpose(),
            };
            let gram = match &q.spec {
                QuerySpec::Lasso(_) => Some(&a * a.transpose()),
                _ => None,
            };
            maps.push((q, a, gram));
        }

        let (cov_stats, var_theta): (Vec<DMatrix<f64>>, DMatrix<f64>) = match model.family {
            ModelFamily::GaussianMean | ModelFamily::GaussianRegression => {
                let var = &b * b.transpose() * model.noise_scale.powi(2);
                let covs = maps
                    .iter()
                    .map(|(_, a, _)| gaussian_covariances(a, &b, model.noise_scale).0)
                    .collect();
                (covs, var)
            }
            ModelFamily::EmpiricalBootstrap => {
                let t_dim: usize = maps.iter().map(|(_, a, _)| a.nrows()).sum();
                let stacked = DMatrix::from_fn(t_dim, n, |r, c| {
                    let mut r = r;
                    for (_, a, _) in &maps {
                        if r < a.nrows() {
                            return a[(r, c)];
                        }
                        r -= a.nrows();
                    }
                    unreachable!()
                });
                let stat = |idx: &[usize]| -> Result<DVector<f64>> {
                    let mut out = DVector::zeros(t_dim + b.nrows());
                    for &i in idx {
                        for r in 0..t_dim {
                            out[r] += stacked[(r, i)] * y[i];
                        }
                    }
                    match &x_m {
                        None => {
                            out[t_dim] = idx.iter().map(|&i| y[i]).sum::<f64>() / sqrt_n;
                        }
                        Some(xm) => {
                            let xs = xm.select_rows(idx);
                            let ys = DVector::from_iterator(idx.len(), idx.iter().map(|&i| y[i]));
                            let coef = (xs.tr_mul(&xs))
                                .cholesky()
                                .ok_or_else(|| {
                                    Error::Degenerate("bootstrap design is rank deficient".into())
                                })?
                                .solve(&xs.tr_mul(&ys));
                            match focus_row {
                                Some(k) => out[t_dim] = coef[k],
                                None => out.rows_mut(t_dim, coef.len()).copy_from(&coef),
                            }
                        }
                    }
                    Ok(out)
                };
                let (cov, var) =
                    pairs_bootstrap_covariances(n, t_dim, stat, opts.bootstrap_draws, opts.seed)?;
                let mut covs = Vec::new();
                let mut r = 0;
                for (_, a, _) in &maps {
                    covs.push(cov.rows(r, a.nrows()).into_owned());
                    r += a.nrows();
                }
                (covs, var)
            }
        };

        let mut blocks = Vec::new();
        for ((q, a, gram), cov) in maps.into_iter().zip(cov_stats) {
            let s = &a * &y;
            let (gamma, nuisance) = clt_decompose(&s, &observed, &cov, &var_theta)?;
            blocks.push(QueryBlock {
                node: Some(q.id),
                spec: q.spec.clone(),
                outcome: q.outcome.clone(),
                gamma,
                nuisance,
                gram,
            });
        }
        Self::new(null, var_theta, observed, blocks)
    }

    /// Exact draws of θ̂ from its selective law: sample θ̂ and every query's
    /// randomization unconditionally and keep the draws that reproduce all
    /// recorded selection events.
    pub fn rejection_oracle(&self, n_target: usize, seed: u64, budget: u64) -> Result<OracleDraws> {
        let d = self.dim();
        let mut values = Vec::with_capacity(n_target * d);
        let mut accepted = 0usize;
        let mut next_chunk = 0u64;
        let mut used = 0u64;
        while accepted < n_target {
            let proposals = next_chunk * ORACLE_CHUNK;
            if proposals >= budget {
                return Err(Error::BudgetExhausted {
                    proposals,
                    accepted: accepted as u64,
                    rate: accepted as f64 / proposals.max(1) as f64,
                });
            }
            let rate = if proposals == 0 {
                1.0
            } else {
                (accepted as f64 / proposals as f64).max(1.0 / proposals as f64)
            };
            let want =
                ((n_target - accepted) as f64 / rate * 1.1 / ORACLE_CHUNK as f64).ceil() as u64;
            let remaining_chunks = (budget - proposals).div_ceil(ORACLE_CHUNK);
            let wave = want.clamp(1, 256).min(remaining_chunks);
            let chunks: Vec<(Vec<f64>, Vec<u64>)> = (next_chunk..next_chunk + wave)
                .into_par_iter()
                .map(|k| self.oracle_chunk(seed, k))
                .collect::<Result<_>>()?;
            for (k, (c, positions)) in chunks.into_iter().enumerate() {
                let take = positions.len().min(n_target - accepted);
                values.extend_from_slice(&c[..take * d]);
                accepted += take;
                used = (next_chunk + k as u64) * ORACLE_CHUNK
                    + if accepted == n_target && take > 0 {
                        positions[take - 1] + 1
                    } else {
                        ORACLE_CHUNK
                    };
                if accepted == n_target {
                    break;
                }
            }
            next_chunk += wave;
        }
        Ok(OracleDraws {
            dim: d,
            values,
            proposals: used,
        })
    }

    /// Accepted draws of one chunk and their proposal positions within it.
    fn oracle_chunk(&self, seed: u64, chunk: u64) -> Result<(Vec<f64>, Vec<u64>)> {
        let d = self.dim();
        let mut rng = stream_rng(seed, chunk);
        let mut out = Vec::new();
        let mut positions = Vec::new();
        let mut omega = Vec::new();
        let mut z = DVector::zeros(d);
        for i in 0..ORACLE_CHUNK {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let theta = &self.mean + &self.chol_l * &z;
            let mut keep = true;
            for b in &self.blocks {
                let s = b.statistic(&theta);
                b.draw_omega(&mut rng, &mut omega);
                if !b.reproduces(s.as_slice(), &omega)? {
                    keep = false;
                    break;
                }
            }
            if keep {
                out.extend(theta.iter());
                positions.push(i);
            }
        }
        Ok((out, positions))
    }
}

fn need(x: &Option<DMatrix<f64>>) -> Result<&DMatrix<f64>> {
    x.as_ref()
        .ok_or_else(|| Error::InvalidDag("query needs a design-matrix parent".into()))
}

/// The response vector shared by every query and the design matrix, if any.
fn session_inputs(dag: &Dag) -> Result<(NodeId, Option<NodeId>)> {
    let mut response = None;
    let mut design = None;
    for q in dag.query_nodes() {
        let inputs = dag.resolve_inputs(q.id)?;
        match response {
            None => response = Some(inputs.response),
            Some(r) if r != inputs.response => {
                return Err(Error::Unsupported(
                    "queries on different response vectors".into(),
                ))
            }
            _ => {}
        }
        if design.is_none() {
            design = inputs.design;
        }
    }
    let first_of = |want: fn(&Shape) -> bool| {
        dag.nodes().iter().find_map(|n| match n {
            Node::Data(d) if d.observed() && want(&d.shape) => Some(d.id),
            _ => None,
        })
    };
    let response = match response {
        Some(r) => r,
        None => first_of(|s| matches!(s, Shape::Vector { .. }))
            .ok_or_else(|| Error::InvalidDag("session has no observed response vector".into()))?,
    };
    let design = design.or_else(|| first_of(|s| matches!(s, Shape::Matrix { .. })));
    Ok((response, design))
}

/// Accepted oracle draws of θ̂, row-major.
#[derive(Debug, Clone)]
pub struct OracleDraws {
    pub dim: usize,
    pub values: Vec<f64>,
    pub proposals: u64,
}

impl OracleDraws {
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(i)
            .step_by(self.dim)
            .copied()
            .collect()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.len() as f64 / self.proposals as f64
    }
}

/// Convenience wrapper: exact selective draws for a recorded session.
pub fn rejection_oracle(
    dag: &Dag,
    model: &ModelSpec,
    focus: Option<usize>,
    seed: u64,
    n_target: usize,
) -> Result<OracleDraws> {
    let opts = ProblemOptions {
        focus,
        seed,
        ..Default::default()
    };
    ConditionalProblem::from_dag(dag, model, &opts)?.rejection_oracle(
        n_target,
        seed,
        DEFAULT_ORACLE_BUDGET,
    )
}
