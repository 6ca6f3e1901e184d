//! Randomized LASSO query
//!
//! minimize ½‖y − Xβ‖² + (ε/2)‖β‖² − ωᵀβ + λ‖β‖₁
//!
//! solved by cyclic coordinate descent on the Gram form, followed by an exact
//! solve on the detected active set so that the KKT equations hold to
//! machine precision. The reconstruction map inverts those equations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Aux, Feature, QueryOutcome};
use crate::error::{check_dim, Error, Result};
use crate::randomization::RandomizationSpec;
use crate::stats::median;

pub const DEFAULT_MAX_SWEEPS: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoQuery {
    pub lam: f64,
    pub ridge_eps: f64,
    pub randomization: Option<RandomizationSpec>,
    /// Columns of the design the query runs on, built from the raw data.
    /// `None` means every raw column, standardized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<Feature>>,
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub beta: Vec<f64>,
    /// u with (G + εI)β − b + λu = 0.
    pub subgradient: Vec<f64>,
    pub sweeps: usize,
    pub kkt_residual: f64,
}

impl LassoQuery {
    pub fn new(lam: f64, ridge_eps: f64, randomization: Option<RandomizationSpec>) -> Result<Self> {
        if !(lam > 0.0 && lam.is_finite()) {
            return Err(Error::invalid(format!("λ must be positive, got {lam}")));
        }
        if !(ridge_eps > 0.0 && ridge_eps.is_finite()) {
            return Err(Error::invalid(format!(
                "ε must be positive, got {ridge_eps}"
            )));
        }
        Ok(Self {
            lam,
            ridge_eps,
            randomization,
            features: None,
        })
    }

    pub fn with_features(mut self, features: Vec<Feature>) -> Self {
        self.features = Some(features);
        self
    }

    pub fn margin(&self) -> f64 {
        1e-8
    }

    pub fn draw_omega<R: Rng + ?Sized>(&self, p: usize, rng: &mut R) -> Result<Vec<f64>> {
        match &self.randomization {
            Some(r) => {
                check_dim(p, r.dimension())?;
                Ok(r.sample(rng))
            }
            None => Ok(vec![0.0; p]),
        }
    }

    /// Coordinate descent for ½βᵀGβ − bᵀβ + (ε/2)‖β‖² + λ‖β‖₁.
    pub fn solve_gram(
        &self,
        gram: &DMatrix<f64>,
        b: &[f64],
        tol: f64,
        max_sweeps: usize,
    ) -> Result<LassoFit> {
        let p = b.len();
        check_dim(p, gram.nrows())?;
        let (lam, eps) = (self.lam, self.ridge_eps);
        let mut beta = vec![0.0; p];
        // g = b − Gβ
        let mut g = b.to_vec();
        let mut residual = kkt_residual(&beta, &g, lam, eps);
        let mut sweeps = 0;
        while residual > tol {
            if sweeps == max_sweeps {
                return Err(Error::NoConvergence { sweeps, residual });
            }
            sweeps += 1;
            for j in 0..p {
                let gjj = gram[(j, j)];
                let old = beta[j];
                let z = g[j] + gjj * old;
                let new = soft_threshold(z, lam) / (gjj + eps);
                if new != old {
                    let delta = new - old;
                    for (gi, gij) in g.iter_mut().zip(gram.column(j).iter()) {
                        *gi -= gij * delta;
                    }
                    beta[j] = new;
                }
            }
            residual = kkt_residual(&beta, &g, lam, eps);
            if !residual.is_finite() {
                return Err(Error::numerical("coordinate descent diverged", &beta));
            }
        }
        polish(gram, b, lam, eps, &mut beta, &mut g);
        let residual = kkt_residual(&beta, &g, lam, eps);
        let subgradient = beta
            .iter()
            .zip(&g)
            .map(|(bj, gj)| if *bj != 0.0 { bj.signum() } else { gj / lam })
            .collect();
        Ok(LassoFit {
            beta,
            subgradient,
            sweeps,
            kkt_residual: residual,
        })
    }

    /// Outcome record from a fit: E, signs, β̂_E and u_{−E}.
    pub fn outcome(&self, fit: &LassoFit) -> QueryOutcome {
        let mut selected = Vec::new();
        let mut signs = Vec::new();
        let mut beta = Vec::new();
        let mut u_minus = Vec::new();
        for (j, (&bj, &uj)) in fit.beta.iter().zip(&fit.subgradient).enumerate() {
            if bj != 0.0 {
                selected.push(j);
                signs.push(if bj > 0.0 { 1 } else { -1 });
                beta.push(bj);
            } else {
                u_minus.push(uj.clamp(-1.0, 1.0));
            }
        }
        QueryOutcome {
            selected,
            signs,
            aux: Aux::Lasso { beta, u_minus },
        }
    }

    pub fn tolerance(omega: &[f64]) -> f64 {
        1e-8 * (1.0 + omega.iter().fold(0.0f64, |m, w| m.max(w.abs())))
    }

    pub fn solve_stat(
        &self,
        gram: &DMatrix<f64>,
        xty: &[f64],
        omega: &[f64],
    ) -> Result<(LassoFit, QueryOutcome)> {
        check_dim(xty.len(), omega.len())?;
        let b: Vec<f64> = xty.iter().zip(omega).map(|(a, w)| a + w).collect();
        let fit = self.solve_gram(gram, &b, Self::tolerance(omega), DEFAULT_MAX_SWEEPS)?;
        let out = self.outcome(&fit);
        Ok((fit, out))
    }

    pub fn solve_with_omega(
        &self,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        omega: &[f64],
    ) -> Result<(Vec<f64>, QueryOutcome)> {
        check_dim(x.nrows(), y.len())?;
        check_dim(x.ncols(), omega.len())?;
        let gram = x.tr_mul(x);
        let xty = x.tr_mul(y);
        let (fit, out) = self.solve_stat(&gram, xty.as_slice(), omega)?;
        Ok((fit.beta, out))
    }

    pub fn solve<R: Rng + ?Sized>(
        &self,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        rng: &mut R,
    ) -> Result<(Vec<f64>, QueryOutcome)> {
        let omega = self.draw_omega(x.ncols(), rng)?;
        self.solve_with_omega(x, y, &omega)
    }

    /// ω = ε(β_E; 0) − Xᵀy + G[:, E]β_E + λ(s_E; u_{−E}) in terms of the Gram
    /// matrix and Xᵀy.
    pub fn reconstruct_stat(
        &self,
        gram: &DMatrix<f64>,
        xty: &[f64],
        beta_e: &[f64],
        u_minus: &[f64],
        outcome: &QueryOutcome,
    ) -> Result<Vec<f64>> {
        let p = xty.len();
        let e = &outcome.selected;
        check_dim(e.len(), beta_e.len())?;
        check_dim(p - e.len(), u_minus.len())?;
        for (b, s) in beta_e.iter().zip(&outcome.signs) {
            if !(b * (*s as f64) > 0.0) {
                return Err(Error::SupportViolation(format!(
                    "β_E entry {b} disagrees with sign {s}"
                )));
            }
        }
        if let Some(u) = u_minus.iter().find(|u| !(u.abs() <= 1.0)) {
            return Err(Error::SupportViolation(format!(
                "|u| = {} exceeds 1",
                u.abs()
            )));
        }
        let mut omega: Vec<f64> = xty.iter().map(|v| -v).collect();
        for (&j, &bj) in e.iter().zip(beta_e) {
            for (w, gij) in omega.iter_mut().zip(gram.column(j).iter()) {
                *w += gij * bj;
            }
        }
        let mut sel = e.iter().zip(beta_e).zip(&outcome.signs).peekable();
        let mut u = u_minus.iter();
        for (j, w) in omega.iter_mut().enumerate() {
            match sel.peek() {
                Some(((&k, &bj), &s)) if k == j => {
                    sel.next();
                    *w += self.ridge_eps * bj + self.lam * s as f64;
                }
                _ => *w += self.lam * u.next().expect("dimension checked"),
            }
        }
        Ok(omega)
    }

    pub fn reconstruct(
        &self,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        beta_e: &[f64],
        u_minus: &[f64],
        outcome: &QueryOutcome,
    ) -> Result<Vec<f64>> {
        check_dim(x.nrows(), y.len())?;
        let gram = x.tr_mul(x);
        let xty = x.tr_mul(y);
        self.reconstruct_stat(&gram, xty.as_slice(), beta_e, u_minus, outcome)
    }

    /// log det(X_EᵀX_E + εI); zero for an empty active set.
    pub fn log_jacobian(&self, x: &DMatrix<f64>, active: &[usize]) -> Result<f64> {
        if active.is_empty() {
            return Ok(0.0);
        }
        let xe = x.select_columns(active);
        let gram = xe.tr_mul(&xe);
        self.log_jacobian_gram(&gram)
    }

    pub fn log_jacobian_gram(&self, gram_e: &DMatrix<f64>) -> Result<f64> {
        if gram_e.nrows() == 0 {
            return Ok(0.0);
        }
        let k = gram_e.nrows();
        let m = gram_e + DMatrix::identity(k, k) * self.ridge_eps;
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::numerical("X_EᵀX_E + εI is not positive definite", &[]))?;
        Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    /// Euclidean projection onto {s_E∘β_E ≥ δ, ‖u‖∞ ≤ 1 − δ}.
    pub fn support_project(&self, signs: &[i8], beta_e: &mut [f64], u_minus: &mut [f64]) {
        let d = self.margin();
        for (b, &s) in beta_e.iter_mut().zip(signs) {
            let s = s as f64;
            *b = s * (s * *b).max(d);
        }
        u_minus
            .iter_mut()
            .for_each(|u| *u = u.clamp(-(1.0 - d), 1.0 - d));
    }

    pub fn objective(
        &self,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        omega: &[f64],
        beta: &[f64],
    ) -> f64 {
        let b = DVector::from_column_slice(beta);
        let r = y - x * &b;
        0.5 * r.norm_squared() + 0.5 * self.ridge_eps * b.norm_squared()
            - omega.iter().zip(beta).map(|(w, b)| w * b).sum::<f64>()
            + self.lam * beta.iter().map(|b| b.abs()).sum::<f64>()
    }
}

fn soft_threshold(z: f64, lam: f64) -> f64 {
    if z > lam {
        z - lam
    } else if z < -lam {
        z + lam
    } else {
        0.0
    }
}

fn kkt_residual(beta: &[f64], g: &[f64], lam: f64, eps: f64) -> f64 {
    beta.iter()
        .zip(g)
        .map(|(&bj, &gj)| {
            let r = gj - eps * bj;
            if bj != 0.0 {
                (r - lam * bj.signum()).abs()
            } else {
                (r.abs() - lam).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Re-solves the active block exactly; kept only if the sign pattern and the
/// inactive subgradient bounds survive.
fn polish(gram: &DMatrix<f64>, b: &[f64], lam: f64, eps: f64, beta: &mut [f64], g: &mut [f64]) {
    let active: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
    if active.is_empty() {
        return;
    }
    let k = active.len();
    let m = DMatrix::from_fn(k, k, |a, c| {
        gram[(active[a], active[c])] + if a == c { eps } else { 0.0 }
    });
    let rhs = DVector::from_fn(k, |a, _| b[active[a]] - lam * beta[active[a]].signum());
    let Some(chol) = m.cholesky() else { return };
    let sol = chol.solve(&rhs);
    if sol
        .iter()
        .zip(&active)
        .any(|(v, &j)| v.signum() != beta[j].signum() || *v == 0.0)
    {
        return;
    }
    let mut new_beta = vec![0.0; beta.len()];
    for (v, &j) in sol.iter().zip(&active) {
        new_beta[j] = *v;
    }
    let gram_beta = gram * DVector::from_column_slice(&new_beta);
    let new_g: Vec<f64> = b
        .iter()
        .zip(gram_beta.iter())
        .map(|(bi, gb)| bi - gb)
        .collect();
    let old_res = kkt_residual(beta, g, lam, eps);
    if kkt_residual(&new_beta, &new_g, lam, eps) <= old_res {
        beta.copy_from_slice(&new_beta);
        g.copy_from_slice(&new_g);
    }
}

/// ε = 0.01 · mean diagonal of XᵀX.
pub fn default_ridge_eps(x: &DMatrix<f64>) -> f64 {
    0.01 * mean_gram_diagonal(x)
}

pub fn mean_gram_diagonal(x: &DMatrix<f64>) -> f64 {
    x.column_iter().map(|c| c.norm_squared()).sum::<f64>() / x.ncols() as f64
}

/// Gaussian randomization scale 0.5 · σ̂ · √(mean diagonal of XᵀX).
pub fn default_randomization_scale(x: &DMatrix<f64>, sigma: f64) -> f64 {
    0.5 * sigma * mean_gram_diagonal(x).sqrt()
}

/// λ = 0.8 · σ̂ · median over `draws` standard Gaussian ξ of ‖Xᵀξ‖∞.
pub fn theory_lambda<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    sigma: f64,
    draws: usize,
    rng: &mut R,
) -> f64 {
    let n = x.nrows();
    let sups: Vec<f64> = (0..draws)
        .map(|_| {
            let xi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            x.tr_mul(&xi).amax()
        })
        .collect();
    0.8 * sigma * median(&sups)
}
