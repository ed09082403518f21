//! Queueing model of a clique-based location anonymizer.
//!
//! A k-anonymity cloaking server collects location-based queries and releases
//! them in batches: whenever at least `k` requests are waiting, it attempts to
//! anonymize a group of `k`, and each attempt succeeds with probability `r`
//! (the chance that `k` compatible requests form a clique under the spatial
//! tolerance constraints). Arrivals are Poisson at rate `lambda`, attempts
//! complete at rate `mu`. This crate provides three independent views of that
//! system, which are meant to be cross-checked against one another:
//!
//! * [`analytic`] — the closed-form stationary distribution obtained from the
//!   characteristic root `z0` of the queue's balance equations, plus the
//!   published mean-value formulas and an M/M/1 baseline;
//! * [`ctmc`] — a truncated continuous-time Markov chain solved numerically,
//!   used as the oracle for the closed forms;
//! * [`desim`] — a discrete-event simulation of the anonymizer, with
//!   Bernoulli or geometric (clique-test) anonymization outcomes.
//!
//! The [`geometry`] module models the spatial side: tolerance rectangles,
//! clique detection among pending queries, and closed-form versus Monte Carlo
//! estimates of the anonymization probability `r` itself.
//!
//! All numeric code is generic over a floating-point [`Scalar`]; the
//! `*64` aliases at the crate root fix the common double-precision case.

pub mod analytic;
pub mod ctmc;
pub mod desim;
pub mod geometry;
pub mod params;
pub mod rng;
pub mod scalar;

pub use params::{LbsQuery, MetricsReport, ParamError, Provenance, Region, SystemParams};
pub use rng::RandomStream;
pub use scalar::Scalar;

/// Double-precision model parameters.
pub type Params64 = params::SystemParams<f64>;
/// Double-precision deployment region.
pub type Region64 = params::Region<f64>;
/// Double-precision metrics report.
pub type Report64 = params::MetricsReport<f64>;
/// Double-precision characteristic root.
pub type Root64 = analytic::CharacteristicRoot<f64>;
/// Double-precision stationary distribution.
pub type Distribution64 = analytic::StationaryDistribution<f64>;
/// Double-precision simulation configuration.
pub type SimConfig64 = desim::SimConfig<f64>;
/// Double-precision simulation report.
pub type SimReport64 = desim::SimReport<f64>;
