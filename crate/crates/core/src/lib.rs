//! Deep density networks for CTR prediction with separated data, measurement
//! and model uncertainty, plus a closed-loop bandit marketplace to evaluate
//! them in.

pub mod bandit;
pub mod dataset;
pub mod density;
pub mod error;
pub mod eval;
pub mod network;
pub mod nn;
pub mod noise;
pub mod search;
pub mod sim;

pub use error::{Error, Result};
