//! Selective sampler: the change of variables from randomization to
//! optimization variables, projected Langevin, and an exact rejection oracle.

mod density;
mod langevin;
mod problem;

pub use density::{build_density, marginal_log_density_threshold, SelectiveDensity};
pub use langevin::{
    default_step_size, langevin_run, langevin_sample, Chain, LangevinConfig, RunStats,
};
pub use problem::{
    clt_decompose, gaussian_covariances, pairs_bootstrap_covariances, rejection_oracle,
    ConditionalProblem, OracleDraws, ProblemOptions, QueryBlock, DEFAULT_ORACLE_BUDGET,
};

/// An unnormalized log-density with a support given by a projection.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// −∞ outside the support.
    fn log_density(&self, x: &[f64]) -> f64;

    /// Writes ∇log p(x) into `grad` and returns log p(x).
    fn grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Euclidean projection onto the (closed, shrunk) support.
    fn project(&self, _x: &mut [f64]) {}

    /// Per-coordinate preconditioning scales.
    fn scales(&self) -> Vec<f64> {
        vec![1.0; self.dim()]
    }
}
