//! Randomized convex selection queries and their reconstruction maps.
//!
//! Each query works in two forms: on raw data `(X, y)` and in "statistic
//! space", where the data enter only through a fixed linear summary (√n·ȳ,
//! the screening z-scores, or Xᵀy for the LASSO). Samplers use the latter.

mod design;
mod lasso;
mod screening;
mod threshold;

use serde::{Deserialize, Serialize};

pub(crate) use design::standardize_column;
pub use design::{build_design, expand_interactions, main_effects, Feature};
pub use lasso::{
    default_randomization_scale, default_ridge_eps, mean_gram_diagonal, theory_lambda, LassoFit,
    LassoQuery, DEFAULT_MAX_SWEEPS,
};
pub use screening::MarginalScreenQuery;
pub use threshold::ThresholdQuery;

use crate::error::{Error, Result};
use crate::randomization::RandomizationSpec;

/// Optimization values recorded at solve time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Aux {
    /// z = √n·ȳ + ω.
    Threshold { z: f64 },
    /// η_{−E} in increasing index order and o_E aligned with `selected`.
    Screen { eta_minus: Vec<f64>, o: Vec<f64> },
    /// β̂_E aligned with `selected` and u_{−E} in increasing index order.
    Lasso { beta: Vec<f64>, u_minus: Vec<f64> },
}

/// The observed value of a query: selected indices (ascending), their signs,
/// and auxiliary optimization values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub selected: Vec<usize>,
    pub signs: Vec<i8>,
    pub aux: Aux,
}

impl QueryOutcome {
    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Same selection event: equal (E, s_E). Auxiliary values are ignored.
    pub fn same_event(&self, other: &QueryOutcome) -> bool {
        self.selected == other.selected && self.signs == other.signs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QuerySpec {
    Threshold(ThresholdQuery),
    MarginalScreen(MarginalScreenQuery),
    Lasso(LassoQuery),
}

impl QuerySpec {
    pub fn randomization(&self) -> Option<&RandomizationSpec> {
        match self {
            QuerySpec::Threshold(q) => q.randomization.as_ref(),
            QuerySpec::MarginalScreen(q) => q.randomization.as_ref(),
            QuerySpec::Lasso(q) => q.randomization.as_ref(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            QuerySpec::Threshold(_) => "threshold",
            QuerySpec::MarginalScreen(_) => "marginal-screen",
            QuerySpec::Lasso(_) => "lasso",
        }
    }

    /// Structural consistency of an outcome with this spec.
    pub fn check_outcome(&self, out: &QueryOutcome) -> Result<()> {
        let mismatch = |m: &str| Err(Error::OutcomeMismatch(m.to_string()));
        if out.signs.len() != out.selected.len() {
            return mismatch("one sign per selected index required");
        }
        if out.signs.iter().any(|s| *s != 1 && *s != -1) {
            return mismatch("signs must be ±1");
        }
        if out.selected.windows(2).any(|w| w[0] >= w[1]) {
            return mismatch("selected indices must be strictly increasing");
        }
        match (self, &out.aux) {
            (QuerySpec::Threshold(q), Aux::Threshold { z }) => {
                let sel = *z > q.tau;
                if sel != (out.selected == [0]) || (!sel && !out.selected.is_empty()) {
                    return mismatch("threshold outcome inconsistent with z");
                }
                Ok(())
            }
            (QuerySpec::MarginalScreen(q), Aux::Screen { eta_minus, o }) => {
                let p = q.dimension();
                if out.selected.iter().any(|&j| j >= p)
                    || o.len() != out.selected.len()
                    || eta_minus.len() + out.selected.len() != p
                {
                    return mismatch("screening outcome dimensions");
                }
                if o.iter().any(|v| !(*v >= 0.0)) || eta_minus.iter().any(|v| !(v.abs() < q.c)) {
                    return mismatch("screening auxiliary values outside support");
                }
                Ok(())
            }
            (QuerySpec::Lasso(q), Aux::Lasso { beta, u_minus }) => {
                if beta.len() != out.selected.len() {
                    return mismatch("lasso β_E length");
                }
                if let Some(f) = &q.features {
                    if out.selected.iter().any(|&j| j >= f.len())
                        || beta.len() + u_minus.len() != f.len()
                    {
                        return mismatch("lasso outcome dimensions");
                    }
                }
                if beta
                    .iter()
                    .zip(&out.signs)
                    .any(|(b, s)| !(b * *s as f64 > 0.0))
                    || u_minus.iter().any(|u| !(u.abs() <= 1.0))
                {
                    return mismatch("lasso auxiliary values outside support");
                }
                Ok(())
            }
            _ => mismatch("auxiliary values belong to a different query kind"),
        }
    }
}
