//! Tabular distributional reinforcement learning with one-step Bellman
//! operators, categorical projections and stochastic-approximation learners.

pub mod distributions;
pub mod dp;
pub mod error;
pub mod learning;
pub mod mdp;
pub mod operators;
pub mod par;
pub mod random;

pub use error::{Error, Result};
