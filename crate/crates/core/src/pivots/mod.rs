//! Selective pivots, intervals and estimators.

mod estimation;
mod inversion;
mod mc;
mod report;
mod session;
mod simple;

pub use estimation::{bayes_posterior_simple, selective_mle, Posterior};
pub use inversion::{
    gaussian_reweight, invert_pivot, tilt_reweight, Reweighted, INVERSION_GRID_POINTS,
    MIN_EFFECTIVE_SAMPLE_SIZE,
};
pub use mc::{conditional_mc_pvalue, exact_conditional_pvalue, ConditionalMc, ExactConditional};
pub use report::{
    extended_real, two_sided, InferenceRecord, IntervalReport, Method, PivotEstimate, PivotReport,
};
pub use session::{infer_session, infer_target, sample_data_coordinate, InferOptions};
pub use simple::{
    boot_pivot_nonrand, plugin_randomized_pivot, tg_pivot, weighted_boot_pivot, wild_boot_pivot,
    wild_boot_unconditional, PluginMethod, WildBootstrap, DEFAULT_BOOTSTRAP_DRAWS,
    DEFAULT_CHAIN_STEPS,
};
