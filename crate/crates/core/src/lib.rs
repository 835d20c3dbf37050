//! Anytime-valid classifier two-sample testing with e-values.
//!
//! The crate is organised bottom-up:
//!
//! - [`eprocess`]: log-domain e-values, their combinators and the running
//!   e-process with its rejection ledger.
//! - [`models`]: the feed-forward classifier (manual backprop, Adam, early
//!   stopping) and closed-form maximum-likelihood null families.
//! - [`ec2st`]: batch e-values from classifier probabilities, the per-point
//!   mixture bound, adaptive mixture weights and the sequential driver.
//! - [`mslrt`]: the generic split likelihood-ratio e-variable and the
//!   predictive conditional-independence e-variable.
//! - [`baselines`]: permutation classifier two-sample tests (accuracy, logit
//!   difference, MMD on learned features).
//! - [`data`]: synthetic generators, batch streams and CSV ingestion.

pub mod baselines;
pub mod data;
pub mod ec2st;
pub mod eprocess;
mod error;
pub mod models;
pub mod mslrt;
pub mod seed;

pub use error::{Error, Result};
