//! The three environments: a supervised-learning unit test, a myopic RL unit
//! test, and a content-recommendation world model.

mod content;
mod rl;
mod sl;

pub use content::{ContentConfig, ContentRecState, ContentStep};
pub use rl::{rl_reward, Action, RlEnvState};
pub use sl::{SlEnvState, SlPrediction, SlStep};
