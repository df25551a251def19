#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision, clippy::inconsistent_digit_grouping)]

pub mod chebyshev;
pub mod cli_io;
pub mod driver;
pub mod error;
pub mod estimators;
pub mod gp_surrogate;
pub mod input_models;
pub mod limit_states;
pub mod linalg;
pub mod optim;
pub mod points;
pub mod proposal_kde;
pub mod real;
pub mod rng;
pub mod special;

pub use driver::{run_kde_ais, run_replications, run_two_stage_is_baseline, EstimatorKind, Problem, RunConfig, SurrogateKind, TraceRow};
pub use error::{Error, Result};
pub use real::Real;

pub type RunTraceF64 = driver::RunTrace<f64>;
pub type RunTraceF32 = driver::RunTrace<f32>;
pub type ReplicationSummaryF64 = driver::ReplicationSummary<f64>;
pub type ReplicationSummaryF32 = driver::ReplicationSummary<f32>;
pub type WeightedKdeF64 = proposal_kde::WeightedKde<f64>;
pub type WeightedKdeF32 = proposal_kde::WeightedKde<f32>;
pub type MixtureProposalF64 = proposal_kde::MixtureProposal<f64>;
pub type MixtureProposalF32 = proposal_kde::MixtureProposal<f32>;
pub type GpPosteriorF64 = gp_surrogate::GpPosterior<f64>;
pub type GpPosteriorF32 = gp_surrogate::GpPosterior<f32>;
pub type DatasetF64 = points::Dataset<f64>;
pub type DatasetF32 = points::Dataset<f32>;
