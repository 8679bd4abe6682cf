//! Randomized dynamical-system datasets, transformer and diffusion
//! meta-models for in-context trajectory prediction, and their evaluation.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod inference;
pub mod models;
pub mod signal;
pub mod system;
pub mod trainer;

pub use error::{Error, Result};
