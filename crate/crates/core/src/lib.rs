//! Reinforcement urns, an artificial cultural market with graded social
//! influence, and the statistics used to compare what participants and an
//! outside observer can predict about them.
//!
//! * [`urn`]: generalised Pólya urns and their ensembles.
//! * [`market`]: the sequential choose/listen/rate/download market.
//! * [`observers`]: concentration, unpredictability, early prediction and
//!   rigidity statistics.
//! * [`intervention`]: sock-puppet injection and burst detection.
//! * [`config`] and [`harness`]: JSON experiment descriptions and the
//!   reproducible runner behind the `simulate` binary.

pub mod config;
pub mod error;
pub mod harness;
pub mod intervention;
pub mod market;
pub mod observers;
pub mod rng;
pub mod urn;

pub use error::{ConfigErrors, ConfigIssue, Error, Result};
