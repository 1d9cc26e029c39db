//! Simulation laboratory for auto-induced distributional shift.
//!
//! Three environments (a supervised unit test, a myopic RL unit test and a
//! content-recommendation world model), four inner-loop learners, outer loops
//! that act on populations of them, context swapping, and the drift metrics
//! used to compare the resulting behaviour.

pub mod env;
pub mod error;
pub mod experiment;
pub mod learners;
pub mod meta;
pub mod metrics;
pub mod mlp;
pub mod numerics;
pub mod recorder;
pub mod report;
pub mod rng;
pub mod scheduler;

pub use error::{Error, Result};
