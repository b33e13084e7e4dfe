//! Dynamic pick-and-place for a legged manipulator: a desk-scale simulator,
//! staged reward machine, success-rate curriculum, online payload estimator
//! and PPO trainer.

pub mod arm_motion;
pub mod checkpoint;
pub mod config;
pub mod curriculum;
pub mod env;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod judge;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod reward;
pub mod sampler;
pub mod scripted;
pub mod sim;
pub mod trainer;

pub use error::{Error, Result};
