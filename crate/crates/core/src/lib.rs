//! Federated zeroth-order optimization.
//!
//! Devices train with function values only: each local step moves along a
//! mini-batch two-point gradient estimate, and the server averages the
//! resulting model deltas, either exactly or over a simulated fading channel
//! with over-the-air computation.

pub mod aircomp;
pub mod data;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod losses;
pub mod rng;
pub mod runtime;
pub mod theory;
pub mod vector;

pub use error::{Error, IdxError, OracleError, Result};
pub use vector::ModelVector;
