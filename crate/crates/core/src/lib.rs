//! Selective inference for interactive data analysis.
//!
//! An analysis session is recorded as a data-analysis DAG ([`dagdag::Dag`]):
//! data nodes, randomized selection queries and their observed outcomes.
//! From that record the [`sampler`] builds the selective density over data
//! and optimization variables and draws from it with projected Langevin
//! dynamics, and [`pivots`] turns the draws (or closed forms, where they
//! exist) into selectively valid p-values, intervals and estimates.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dagdag;
pub mod datasets;
pub mod error;
pub mod pipeline;
pub mod pivots;
pub mod queries;
pub mod randomization;
pub mod sampler;
pub mod simulate;
pub mod special;
pub mod stats;

pub use dagdag::{Dag, ModelFamily, ModelSpec, NodeId, Shape, Target};
pub use datasets::Dataset;
pub use error::{Error, Result};
pub use queries::{
    Aux, Feature, LassoQuery, MarginalScreenQuery, QueryOutcome, QuerySpec, ThresholdQuery,
};
pub use randomization::{Family, RandomizationSpec};
