//! Blended inverse-probability-weighting / multiple-imputation analysis of
//! incomplete data, with delta-adjusted sensitivity analysis for data missing
//! not at random.
//!
//! The data provenance is split into an ordered sequence of sub-mechanisms.
//! Each one is handled by weighting ([`mnar::solve_selection`], Cox enrollment
//! weights from [`survival`]) or by imputation ([`mnar::impute_continuous`]
//! and friends), and [`engine::run_blended`] strings them together.

pub mod engine;
pub mod error;
pub mod glm;
pub mod inference;
mod linalg;
pub mod mnar;
pub mod rng;
pub mod sim;
pub mod survival;
pub mod sweep;
pub mod tabular;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use linalg::{compensated_sum, expit, logit};
