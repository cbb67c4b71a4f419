//! Charging-time prediction for battery electric vehicles.
//!
//! A gradient-boosted power model over physics-informed features is
//! integrated across the SoC trajectory; a DQN agent takes over as charging
//! sessions accumulate. A CC-CV simulator supplies ground truth.

pub mod error;
pub mod eval;
pub mod features;
pub mod gbm;
pub mod orchestrator;
pub mod physics;
pub mod predictor;
pub mod rl;
pub mod simulator;

pub use error::{Error, Result};
