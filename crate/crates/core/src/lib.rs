//! Server-side defense against unreliable clients in one-shot fair
//! collaborative learning.
//!
//! Clients ship a single proxy dataset to the server. The server holds a tiny
//! trusted root sample per client and learns client aggregation weights on the
//! probability simplex by minimizing the weighted root loss of the inner
//! logistic model plus a decision-boundary-covariance fairness penalty. The
//! gradient with respect to the weights goes through the inner argmin by
//! implicit differentiation.
//!
//! Module map:
//!
//! - [`data`]: CSV ingestion, client partitioning, train/test/root splits.
//! - [`logit`]: weighted regularized logistic loss and its derivatives, plus
//!   the L-BFGS inner solver.
//! - [`fairness`]: DBC surrogates, SPD/EOD metrics, fair-proxy check.
//! - [`proxy`]: client-side proxy generation and unfairness ranking.
//! - [`defense`]: simplex projection, penalty objective, hypergradient and
//!   the projected Adam outer loop.
//! - [`comparators`]: baseline, FedASL and FedNolowe one-shot adaptations.
//! - [`harness`]: scenario construction, sweeps, evaluation and reports.
//!
//! Data-parallel work goes through [`par`]; with the `parallel` feature off
//! everything runs sequentially and produces bit-identical results.

pub mod comparators;
pub mod data;
pub mod defense;
mod error;
pub mod fairness;
pub mod harness;
pub mod logit;
pub mod optim;
pub mod par;
pub mod proxy;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
