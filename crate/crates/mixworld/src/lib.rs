//! Continual model-based RL and visual forecasting at desk scale.
//!
//! The crate trains a task-conditioned mixture world model on a stream of
//! synthetic pixel POMDPs, rehearses previous tasks through predictive
//! experience replay (an initial-frame generator plus frozen world-model
//! rollouts), and learns behavior with lambda-return targets on real data
//! and conservatively clamped targets on replayed data.

pub mod behavior;
pub mod config;
pub mod envs;
pub mod generator;
pub mod inference;
pub mod metrics;
pub mod nets;
pub mod pipeline;
pub mod replay;
pub mod substrate;
pub mod training;
pub mod worldmodel;

pub use substrate::{DiagGaussian, Graph, ParamStore, RngStream, Tensor};
