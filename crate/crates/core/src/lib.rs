//! Engagement-state dynamics with endogenous adherence.
//!
//! Scalar engagement evolves linearly in the recommended and adhered
//! treatment vectors with bounded Gaussian noise; adherence is a logistic
//! function of engagement. The crate provides the simulator, online
//! estimators, grid-based planning, a set of adaptive policies and the
//! experiment harness that compares them.

pub mod cohort;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod io;
pub mod model;
pub mod planning;
pub mod policies;
pub mod seeds;

pub use error::{EngageError, Result};
