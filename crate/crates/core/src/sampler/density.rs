//! The selective density over (θ̂, optimization variables).

use nalgebra::{DMatrix, DVector};

use super::problem::{ConditionalProblem, ProblemOptions, QueryBlock};
use super::LogDensity;
use crate::dagdag::{Dag, ModelSpec};
use crate::error::{Error, Result};
use crate::queries::{Aux, QuerySpec};
use crate::randomization::RandomizationSpec;
use crate::special::norm_log_pdf;

/// log φ(t − m) + log(1 − G(τ − t)), unnormalized.
pub fn marginal_log_density_threshold(t: f64, m: f64, tau: f64, g: &RandomizationSpec) -> f64 {
    norm_log_pdf(t - m) + g.log_sf(tau - t)
}

/// log P(a < ω < b) and its derivative in a shift of the interval,
/// d/dx log P(a − x < ω < b − x).
fn log_interval_prob(g: &RandomizationSpec, a: f64, b: f64) -> (f64, f64) {
    let dens = |y: f64| {
        if y.is_finite() {
            g.log_density_1d(y)
        } else {
            f64::NEG_INFINITY
        }
    };
    let log_p = if b == f64::INFINITY {
        g.log_sf(a)
    } else if a == f64::NEG_INFINITY {
        g.log_cdf(b)
    } else {
        let p = if a + b > 0.0 {
            g.sf(a) - g.sf(b)
        } else {
            g.cdf(b) - g.cdf(a)
        };
        if p > 1e-8 {
            let d = (dens(a).exp() - dens(b).exp()) / p;
            return (p.ln(), d);
        }
        if a + b > 0.0 {
            // Upper tail: Ḡ(a) − Ḡ(b).
            let (la, lb) = (g.log_sf(a), g.log_sf(b));
            la + (-(lb - la).exp()).ln_1p()
        } else {
            let (la, lb) = (g.log_cdf(a), g.log_cdf(b));
            lb + (-(la - lb).exp()).ln_1p()
        }
    };
    let d = (dens(a) - log_p).exp() - (dens(b) - log_p).exp();
    (log_p, d)
}

#[derive(Debug, Clone, Copy)]
enum Coord {
    Active { sign: f64 },
    Inactive,
}

#[derive(Debug, Clone)]
enum BlockKind {
    Threshold {
        tau: f64,
        selected: bool,
        margin: f64,
    },
    Screen {
        c: f64,
        margin: f64,
    },
    Lasso {
        lam: f64,
        eps: f64,
        margin: f64,
        active: Vec<usize>,
        gram_e: DMatrix<f64>,
    },
    /// A threshold or screening block with its variables integrated out:
    /// contributes log P(selection | S) per coordinate.
    Collapsed {
        lower: f64,
        upper: f64,
    },
}

#[derive(Debug, Clone)]
struct Block {
    offset: usize,
    nvars: usize,
    gamma: DMatrix<f64>,
    nuisance: DVector<f64>,
    g: RandomizationSpec,
    coords: Vec<Coord>,
    kind: BlockKind,
}

impl Block {
    fn len(&self) -> usize {
        self.nvars
    }

    fn vars<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.offset..self.offset + self.len()]
    }

    fn omega(&self, theta: &DVector<f64>, x: &[f64], out: &mut [f64]) {
        let v = self.vars(x);
        let s = &self.gamma * theta + &self.nuisance;
        match &self.kind {
            BlockKind::Threshold { .. } => out[0] = v[0] - s[0],
            BlockKind::Screen { c, .. } => {
                for (j, coord) in self.coords.iter().enumerate() {
                    let u = match *coord {
                        Coord::Active { sign } => sign * (c + v[j]),
                        Coord::Inactive => v[j],
                    };
                    out[j] = u - s[j];
                }
            }
            BlockKind::Collapsed { .. } => {}
            BlockKind::Lasso {
                lam,
                eps,
                active,
                gram_e,
                ..
            } => {
                for (j, coord) in self.coords.iter().enumerate() {
                    let mut w = -s[j];
                    for (k, &a) in active.iter().enumerate() {
                        w += gram_e[(j, k)] * v[a];
                    }
                    w += match *coord {
                        Coord::Active { sign } => eps * v[j] + lam * sign,
                        Coord::Inactive => lam * v[j],
                    };
                    out[j] = w;
                }
            }
        }
    }

    /// Σ_j log P(ω_j ∈ (lower_j − S_j, upper_j − S_j)) for a collapsed block,
    /// with its derivative in S added to `ds`.
    fn collapsed_log_prob(&self, theta: &DVector<f64>, ds: &mut Vec<f64>) -> f64 {
        let BlockKind::Collapsed { lower, upper } = self.kind else {
            return 0.0;
        };
        let s = &self.gamma * theta + &self.nuisance;
        ds.clear();
        let mut total = 0.0;
        for (j, coord) in self.coords.iter().enumerate() {
            // The event for coordinate j, as an interval for S_j + ω_j.
            let (lo, hi) = match *coord {
                Coord::Active { sign } if sign > 0.0 => (upper, f64::INFINITY),
                Coord::Active { .. } => (f64::NEG_INFINITY, -upper),
                Coord::Inactive => (lower, upper),
            };
            let (v, d) = log_interval_prob(&self.g, lo - s[j], hi - s[j]);
            total += v;
            ds.push(d);
        }
        total
    }

    fn in_support(&self, x: &[f64]) -> bool {
        if self.nvars == 0 {
            return true;
        }
        let v = self.vars(x);
        match &self.kind {
            BlockKind::Threshold { tau, selected, .. } => {
                if *selected {
                    v[0] > *tau
                } else {
                    v[0] <= *tau
                }
            }
            BlockKind::Screen { c, .. } => {
                self.coords.iter().zip(v).all(|(coord, &u)| match coord {
                    Coord::Active { .. } => u >= 0.0,
                    Coord::Inactive => u.abs() < *c,
                })
            }
            BlockKind::Lasso { .. } => self.coords.iter().zip(v).all(|(coord, &u)| match coord {
                Coord::Active { sign } => sign * u > 0.0,
                Coord::Inactive => u.abs() <= 1.0,
            }),
            BlockKind::Collapsed { .. } => true,
        }
    }

    fn project(&self, x: &mut [f64]) {
        let len = self.len();
        let v = &mut x[self.offset..self.offset + len];
        match &self.kind {
            BlockKind::Threshold {
                tau,
                selected,
                margin,
            } => {
                v[0] = if *selected {
                    v[0].max(tau + margin)
                } else {
                    v[0].min(tau - margin)
                }
            }
            BlockKind::Screen { c, margin } => {
                for (coord, u) in self.coords.iter().zip(v.iter_mut()) {
                    *u = match coord {
                        Coord::Active { .. } => u.max(0.0),
                        Coord::Inactive => u.clamp(-(c - margin), c - margin),
                    }
                }
            }
            BlockKind::Lasso { margin, .. } => {
                for (coord, u) in self.coords.iter().zip(v.iter_mut()) {
                    *u = match *coord {
                        Coord::Active { sign } => sign * (sign * *u).max(*margin),
                        Coord::Inactive => u.clamp(-(1.0 - margin), 1.0 - margin),
                    }
                }
            }
            BlockKind::Collapsed { .. } => {}
        }
    }

    /// Adds ∂ log g(ω)/∂(vars) into `grad` and returns −Γᵀ∇log g(ω).
    fn backprop(&self, gw: &[f64], grad: &mut [f64]) -> DVector<f64> {
        let len = self.len();
        let gv = &mut grad[self.offset..self.offset + len];
        match &self.kind {
            BlockKind::Threshold { .. } => gv[0] += gw[0],
            BlockKind::Screen { .. } => {
                for (j, coord) in self.coords.iter().enumerate() {
                    gv[j] += match *coord {
                        Coord::Active { sign } => sign * gw[j],
                        Coord::Inactive => gw[j],
                    };
                }
            }
            BlockKind::Lasso {
                lam,
                eps,
                active,
                gram_e,
                ..
            } => {
                for (k, &a) in active.iter().enumerate() {
                    gv[a] += gram_e
                        .column(k)
                        .iter()
                        .zip(gw)
                        .map(|(g, w)| g * w)
                        .sum::<f64>();
                }
                for (j, coord) in self.coords.iter().enumerate() {
                    gv[j] += match coord {
                        Coord::Active { .. } => eps * gw[j],
                        Coord::Inactive => lam * gw[j],
                    };
                }
            }
            BlockKind::Collapsed { .. } => {}
        }
        -(self.gamma.tr_mul(&DVector::from_column_slice(gw)))
    }
}

/// f(θ)·∏ g_j(φ_j(θ, v_j))·J_j on ∏ B_j, with θ Gaussian and each query's
/// optimization variables v_j laid out one per statistic coordinate: z for
/// the threshold, o_j (selected) or η_j (not selected) for screening, β_j
/// (active) or u_j (inactive) for the LASSO.
#[derive(Debug, Clone)]
pub struct SelectiveDensity {
    d: usize,
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    blocks: Vec<Block>,
    dim: usize,
    scales: Vec<f64>,
    init: Vec<f64>,
    log_jacobian: f64,
    /// −½ log det(2πV), so the data term is the normalized reference density.
    data_constant: f64,
}

impl SelectiveDensity {
    pub fn new(problem: &ConditionalProblem) -> Result<Self> {
        Self::build(problem, false)
    }

    /// The same law with the threshold and screening variables integrated
    /// out in closed form, leaving θ and any LASSO variables.
    pub fn collapsed(problem: &ConditionalProblem) -> Result<Self> {
        Self::build(problem, true)
    }

    fn build(problem: &ConditionalProblem, collapse: bool) -> Result<Self> {
        let d = problem.dim();
        let precision = problem
            .cov
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("singular target variance".into()))?;
        let mut scales: Vec<f64> = (0..d).map(|i| problem.cov[(i, i)].sqrt()).collect();
        let mut init: Vec<f64> = problem.observed.iter().copied().collect();
        let mut blocks = Vec::new();
        let mut offset = d;
        let mut log_jacobian = 0.0;
        for qb in &problem.blocks {
            let (block, block_init, block_scales, jac) =
                make_block(qb, offset, &problem.cov, collapse)?;
            offset += block.len();
            scales.extend(block_scales);
            init.extend(block_init);
            log_jacobian += jac;
            blocks.push(block);
        }
        let log_det = 2.0
            * problem
                .cov
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Degenerate("singular target variance".into()))?
                .l()
                .diagonal()
                .iter()
                .map(|v| v.ln())
                .sum::<f64>();
        let data_constant = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        let mut density = Self {
            data_constant,
            d,
            mean: problem.mean.clone(),
            precision,
            blocks,
            dim: offset,
            scales,
            init,
            log_jacobian,
        };
        let mut x = density.init.clone();
        density.project(&mut x);
        density.init = x;
        Ok(density)
    }

    pub fn data_dim(&self) -> usize {
        self.d
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Index range of block `j`'s optimization variables in the state.
    pub fn block_range(&self, j: usize) -> std::ops::Range<usize> {
        let b = &self.blocks[j];
        b.offset..b.offset + b.len()
    }

    /// The state at the observed data and recorded optimization values,
    /// projected into the support.
    pub fn initial_state(&self) -> Vec<f64> {
        self.init.clone()
    }

    pub fn log_jacobian(&self) -> f64 {
        self.log_jacobian
    }

    /// ω_j = φ_j(θ, v_j) for every block.
    pub fn omegas(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let theta = DVector::from_column_slice(&x[..self.d]);
        self.blocks
            .iter()
            .map(|b| {
                let mut w = vec![0.0; b.len()];
                b.omega(&theta, x, &mut w);
                w
            })
            .collect()
    }

    /// Σ_j log g_j(ω_j).
    pub fn randomization_log_density(&self, x: &[f64]) -> f64 {
        self.omegas(x)
            .iter()
            .zip(&self.blocks)
            .map(|(w, b)| w.iter().map(|&v| b.g.log_density_1d(v)).sum::<f64>())
            .sum()
    }

    pub fn in_support(&self, x: &[f64]) -> bool {
        x.len() == self.dim && self.blocks.iter().all(|b| b.in_support(x))
    }
}

fn make_block(
    qb: &QueryBlock,
    offset: usize,
    cov: &DMatrix<f64>,
    collapse: bool,
) -> Result<(Block, Vec<f64>, Vec<f64>, f64)> {
    let g = qb.spec.randomization().cloned().ok_or_else(|| {
        Error::Unsupported(format!(
            "{} query without randomization has no smooth density",
            qb.spec.name()
        ))
    })?;
    let k = qb.stat_dim();
    let mut coords = vec![Coord::Inactive; k];
    for (&j, &s) in qb.outcome.selected.iter().zip(&qb.outcome.signs) {
        coords[j] = Coord::Active { sign: s as f64 };
    }
    // Spread of S + ω given the nuisance, per coordinate.
    let var_s = (&qb.gamma * cov * qb.gamma.transpose()).diagonal();
    let spread: Vec<f64> = var_s.iter().map(|v| (v + g.variance()).sqrt()).collect();
    let mut init = vec![0.0; k];
    let fill = |init: &mut [f64], act: &[f64], inact: &[f64]| {
        let (mut a, mut i) = (act.iter(), inact.iter());
        for (j, c) in coords.iter().enumerate() {
            init[j] = match c {
                Coord::Active { .. } => *a.next().unwrap_or(&0.0),
                Coord::Inactive => *i.next().unwrap_or(&0.0),
            };
        }
    };
    let mut jac = 0.0;
    let (kind, scales) = match (&qb.spec, &qb.outcome.aux) {
        (QuerySpec::Threshold(q), Aux::Threshold { .. }) if collapse => (
            BlockKind::Collapsed {
                lower: f64::NEG_INFINITY,
                upper: q.tau,
            },
            Vec::new(),
        ),
        (QuerySpec::MarginalScreen(q), Aux::Screen { .. }) if collapse => (
            BlockKind::Collapsed {
                lower: -q.c,
                upper: q.c,
            },
            Vec::new(),
        ),
        (QuerySpec::Threshold(q), Aux::Threshold { z }) => {
            init[0] = *z;
            (
                BlockKind::Threshold {
                    tau: q.tau,
                    selected: !qb.outcome.selected.is_empty(),
                    margin: 1e-8 * q.tau.abs().max(1.0),
                },
                spread.clone(),
            )
        }
        (QuerySpec::MarginalScreen(q), Aux::Screen { eta_minus, o }) => {
            fill(&mut init, o, eta_minus);
            (
                BlockKind::Screen {
                    c: q.c,
                    margin: q.margin(),
                },
                spread.clone(),
            )
        }
        (QuerySpec::Lasso(q), Aux::Lasso { beta, u_minus }) => {
            fill(&mut init, beta, u_minus);
            let gram = qb
                .gram
                .as_ref()
                .expect("lasso block carries its Gram matrix");
            let active = qb.outcome.selected.clone();
            let gram_e = gram.select_columns(&active);
            jac = q.log_jacobian_gram(&gram.select_rows(&active).select_columns(&active))?;
            let scales = coords
                .iter()
                .enumerate()
                .map(|(j, c)| match c {
                    Coord::Active { .. } => spread[j] / (gram[(j, j)] + q.ridge_eps),
                    Coord::Inactive => (spread[j] / q.lam).min(1.0),
                })
                .collect();
            (
                BlockKind::Lasso {
                    lam: q.lam,
                    eps: q.ridge_eps,
                    margin: q.margin(),
                    active,
                    gram_e,
                },
                scales,
            )
        }
        _ => {
            return Err(Error::OutcomeMismatch(
                "auxiliary values do not match the query kind".into(),
            ))
        }
    };
    if matches!(kind, BlockKind::Collapsed { .. }) {
        init.clear();
    }
    Ok((
        Block {
            offset,
            nvars: init.len(),
            gamma: qb.gamma.clone(),
            nuisance: qb.nuisance.clone(),
            g,
            coords,
            kind,
        },
        init,
        scales,
        jac,
    ))
}

impl LogDensity for SelectiveDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        if !self.in_support(x) {
            return f64::NEG_INFINITY;
        }
        let theta = DVector::from_column_slice(&x[..self.d]);
        let c = &theta - &self.mean;
        let data = -0.5 * c.dot(&(&self.precision * &c)) + self.data_constant;
        let mut ds = Vec::new();
        let collapsed: f64 = self
            .blocks
            .iter()
            .map(|b| b.collapsed_log_prob(&theta, &mut ds))
            .sum();
        data + self.randomization_log_density(x) + collapsed + self.log_jacobian
    }

    fn grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let theta = DVector::from_column_slice(&x[..self.d]);
        let c = &theta - &self.mean;
        let pc = &self.precision * &c;
        let mut value = -0.5 * c.dot(&pc) + self.data_constant + self.log_jacobian;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (i, v) in pc.iter().enumerate() {
            grad[i] = -v;
        }
        let mut w = Vec::new();
        let mut gw = Vec::new();
        for b in &self.blocks {
            if b.nvars == 0 {
                value += b.collapsed_log_prob(&theta, &mut gw);
                let gt = b.gamma.tr_mul(&DVector::from_column_slice(&gw));
                for (i, v) in gt.iter().enumerate() {
                    grad[i] += v;
                }
                continue;
            }
            w.clear();
            w.resize(b.len(), 0.0);
            b.omega(&theta, x, &mut w);
            gw.clear();
            gw.extend(w.iter().map(|&v| b.g.grad_log_density_1d(v)));
            value += w.iter().map(|&v| b.g.log_density_1d(v)).sum::<f64>();
            let gt = b.backprop(&gw, grad);
            for (i, v) in gt.iter().enumerate() {
                grad[i] += v;
            }
        }
        if self.in_support(x) {
            value
        } else {
            f64::NEG_INFINITY
        }
    }

    fn project(&self, x: &mut [f64]) {
        for b in &self.blocks {
            b.project(x);
        }
    }

    fn scales(&self) -> Vec<f64> {
        self.scales.clone()
    }
}

/// The selective density of a recorded session under `model`, over the full
/// target vector.
pub fn build_density(dag: &Dag, model: &ModelSpec) -> Result<SelectiveDensity> {
    let problem = ConditionalProblem::from_dag(dag, model, &ProblemOptions::default())?;
    SelectiveDensity::new(&problem)
}
