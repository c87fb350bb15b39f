//! Numerical laboratory for massive access and mixed-criticality connectivity.
//!
//! - [`model`]: preamble books, activity, Rayleigh channels and the received signal.
//! - [`amp`]: MMV approximate message passing with state evolution.
//! - [`covariance`]: covariance-based maximum-likelihood activity detection.
//! - [`protocols`]: slotted ALOHA, coded slotted ALOHA, grant-based and grant-free pipelines, age metrics.
//! - [`downlink`]: acknowledgment, feedback and schedule metadata codecs.
//! - [`slicing`]: H-OMA / H-NOMA coexistence tradeoffs.
//! - [`tailstats`]: power-law and generalized Pareto lower-tail models and rate selection.
//! - [`harness`]: seeded experiment runner behind the `mara` CLI.

pub mod amp;
pub mod bits;
pub mod covariance;
pub mod downlink;
pub mod harness;
pub mod hash;
pub mod model;
pub mod protocols;
pub mod slicing;
pub mod tailstats;
