use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Aux, QueryOutcome};
use crate::error::{check_dim, Error, Result};
use crate::randomization::RandomizationSpec;

/// Randomized thresholded marginal screening: selects
/// E = {j : |T_j + ω_j| > c} with T_j = X_jᵀy / (σ̂_j ‖X_j‖).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalScreenQuery {
    pub c: f64,
    pub randomization: Option<RandomizationSpec>,
    pub sigma_estimates: Vec<f64>,
}

impl MarginalScreenQuery {
    pub fn new(
        c: f64,
        randomization: Option<RandomizationSpec>,
        sigma_estimates: Vec<f64>,
    ) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid(format!(
                "screening threshold must be positive, got {c}"
            )));
        }
        if sigma_estimates.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("noise estimates must be positive"));
        }
        if let Some(r) = &randomization {
            check_dim(sigma_estimates.len(), r.dimension())?;
        }
        Ok(Self {
            c,
            randomization,
            sigma_estimates,
        })
    }

    pub fn dimension(&self) -> usize {
        self.sigma_estimates.len()
    }

    /// Interior margin δ kept between sampler iterates and the |η| = c boundary.
    pub fn margin(&self) -> f64 {
        1e-8 * self.c
    }

    /// Per-column scaling D_j = 1/(σ̂_j ‖X_j‖) so that T = D Xᵀy.
    pub fn column_scales(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_dim(self.dimension(), x.ncols())?;
        x.column_iter()
            .zip(&self.sigma_estimates)
            .enumerate()
            .map(|(j, (col, s))| {
                let norm = col.norm();
                if norm == 0.0 {
                    Err(Error::Degenerate(format!("column {j} has zero norm")))
                } else {
                    Ok(1.0 / (s * norm))
                }
            })
            .collect()
    }

    /// Marginal z-statistics for centered columns of `x`.
    pub fn statistics(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Vec<f64>> {
        check_dim(x.nrows(), y.len())?;
        let d = self.column_scales(x)?;
        let xty = x.tr_mul(y);
        Ok(xty.iter().zip(d).map(|(v, d)| v * d).collect())
    }

    /// Selection at given statistics and randomization. An exact tie
    /// |T_j + ω_j| = c is reported as an error.
    pub fn solve_stat(&self, t: &[f64], omega: &[f64]) -> Result<QueryOutcome> {
        check_dim(self.dimension(), t.len())?;
        check_dim(self.dimension(), omega.len())?;
        let mut selected = Vec::new();
        let mut signs = Vec::new();
        let mut o = Vec::new();
        let mut eta_minus = Vec::new();
        for (j, (tj, wj)) in t.iter().zip(omega).enumerate() {
            let v = tj + wj;
            if v.abs() == self.c {
                return Err(Error::Tie { index: j });
            }
            if v.abs() > self.c {
                selected.push(j);
                signs.push(if v > 0.0 { 1 } else { -1 });
                o.push(v.abs() - self.c);
            } else {
                eta_minus.push(v);
            }
        }
        Ok(QueryOutcome {
            selected,
            signs,
            aux: Aux::Screen { eta_minus, o },
        })
    }

    pub fn solve_with_omega(
        &self,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        omega: &[f64],
    ) -> Result<QueryOutcome> {
        let t = self.statistics(x, y)?;
        self.solve_stat(&t, omega)
    }

    /// Draws ω and solves; an exact tie triggers one fresh draw before failing.
    pub fn solve<R: Rng + ?Sized>(
        &self,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        rng: &mut R,
    ) -> Result<QueryOutcome> {
        let t = self.statistics(x, y)?;
        let omega = self.draw_omega(rng);
        match self.solve_stat(&t, &omega) {
            Err(Error::Tie { .. }) if self.randomization.is_some() => {
                let omega = self.draw_omega(rng);
                self.solve_stat(&t, &omega)
            }
            other => other,
        }
    }

    pub fn draw_omega<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.randomization {
            Some(r) => r.sample(rng),
            None => vec![0.0; self.dimension()],
        }
    }

    /// Reconstruction map: ω = (c·s_E; η_{−E}) − T + (s_E∘o_E; 0).
    pub fn reconstruct_stat(
        &self,
        t: &[f64],
        eta_minus: &[f64],
        o: &[f64],
        outcome: &QueryOutcome,
    ) -> Result<Vec<f64>> {
        let p = self.dimension();
        check_dim(p, t.len())?;
        check_dim(outcome.selected.len(), o.len())?;
        check_dim(p - outcome.selected.len(), eta_minus.len())?;
        if let Some(bad) = o.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::SupportViolation(format!(
                "o_E entry {bad} is negative"
            )));
        }
        if let Some(bad) = eta_minus.iter().find(|v| !(v.abs() < self.c)) {
            return Err(Error::SupportViolation(format!(
                "|η| = {} is not below c = {}",
                bad.abs(),
                self.c
            )));
        }
        let mut omega = vec![0.0; p];
        let mut sel = outcome
            .selected
            .iter()
            .zip(&outcome.signs)
            .zip(o)
            .peekable();
        let mut eta = eta_minus.iter();
        for (j, w) in omega.iter_mut().enumerate() {
            let v = match sel.peek() {
                Some(((&k, &s), &oj)) if k == j => {
                    sel.next();
                    let s = s as f64;
                    self.c * s + s * oj
                }
                _ => *eta.next().expect("dimension checked"),
            };
            *w = v - t[j];
        }
        Ok(omega)
    }

    pub fn reconstruct(
        &self,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        eta_minus: &[f64],
        o: &[f64],
        outcome: &QueryOutcome,
    ) -> Result<Vec<f64>> {
        let t = self.statistics(x, y)?;
        self.reconstruct_stat(&t, eta_minus, o, outcome)
    }

    /// Euclidean projection onto {‖η_{−E}‖∞ ≤ c − δ, o_E ≥ 0}.
    pub fn support_project(&self, eta_minus: &mut [f64], o: &mut [f64]) {
        let bound = self.c - self.margin();
        eta_minus
            .iter_mut()
            .for_each(|v| *v = v.clamp(-bound, bound));
        o.iter_mut().for_each(|v| *v = v.max(0.0));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn query(p: usize) -> MarginalScreenQuery {
        let r = RandomizationSpec::gaussian(1.0)
            .unwrap()
            .with_dimension(p)
            .unwrap();
        MarginalScreenQuery::new(2.5, Some(r), vec![1.0; p]).unwrap()
    }

    #[test]
    fn one_dimensional_example() {
        let q = query(1);
        let out = q.solve_stat(&[3.0], &[0.1]).unwrap();
        assert_eq!(out.selected, vec![0]);
        assert_eq!(out.signs, vec![1]);
        let Aux::Screen { o, eta_minus } = &out.aux else {
            panic!()
        };
        assert!((o[0] - 0.6).abs() < 1e-12);
        assert!(eta_minus.is_empty());
        let w = q.reconstruct_stat(&[3.0], &[], o, &out).unwrap();
        assert!((w[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn nothing_selected() {
        let out = query(2).solve_stat(&[0.1, -0.2], &[0.0, 0.0]).unwrap();
        assert!(out.selected.is_empty());
    }

    #[test]
    fn support_guard() {
        let q = query(1);
        let out = q.solve_stat(&[3.0], &[0.1]).unwrap();
        assert!(matches!(
            q.reconstruct_stat(&[3.0], &[], &[-0.1], &out),
            Err(Error::SupportViolation(_))
        ));
    }

    #[test]
    fn ties_are_errors() {
        let q = query(2);
        assert!(matches!(
            q.solve_stat(&[2.0, 0.0], &[0.5, 0.0]),
            Err(Error::Tie { index: 0 })
        ));
    }

    #[test]
    fn zero_norm_column_is_an_error() {
        let q = query(2);
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(q.statistics(&x, &y).is_err());
    }

    #[test]
    fn projection_examples() {
        let q = query(3);
        let mut eta = vec![0.5, 5.0, -5.0];
        let mut o = vec![-1.0, 0.3];
        q.support_project(&mut eta, &mut o);
        assert_eq!(eta[0], 0.5);
        assert_eq!(eta[1], 2.5 - q.margin());
        assert_eq!(eta[2], -(2.5 - q.margin()));
        assert_eq!(o, vec![0.0, 0.3]);
    }

    #[test]
    fn selection_matches_direct_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (n, p) = (50, 10);
        let mut x = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0));
        for mut c in x.column_iter_mut() {
            let m = c.mean();
            c.add_scalar_mut(-m);
        }
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] * 3.0 + rng.gen_range(-1.0..1.0));
        let q = query(p);
        let omega = q.draw_omega(&mut rng);
        let out = q.solve_with_omega(&x, &y, &omega).unwrap();
        let brute: Vec<usize> = (0..p)
            .filter(|&j| {
                let col = x.column(j);
                let t = col.dot(&y) / col.norm();
                (t + omega[j]).abs() > 2.5
            })
            .collect();
        assert_eq!(out.selected, brute);
    }
}
