//! Antenna selection and power allocation for mixed near-field and
//! far-field multi-user downlink with an extremely large array.

pub mod ascent;
pub mod baselines;
pub mod channel;
pub mod error;
pub mod experiment;
pub mod greedy;
pub mod metrics;
pub mod pdd;
pub mod power;
pub mod rng;
pub mod scenario;
pub mod schemes;

pub use error::{Error, Result};
