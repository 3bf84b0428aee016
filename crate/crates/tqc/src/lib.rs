//! Distributional actor-critic training with truncated-mixture TD targets,
//! plus a single-state laboratory for measuring value-estimation bias.

pub mod actor;
pub mod bias_lab;
pub mod dist;
pub mod env;
pub mod error;
pub mod models;
pub mod nn;
pub mod trainer;

pub use error::{Error, Result};
