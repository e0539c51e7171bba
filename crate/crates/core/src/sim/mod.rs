//! Data generators for simulation studies.

mod durable;
mod scenario;

pub use durable::{durable_horizon, durable_spec, generate_durable_like, DURABLE_ASSIGNMENTS};
pub use scenario::*;
