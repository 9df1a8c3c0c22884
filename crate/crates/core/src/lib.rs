//! Kernelized active offline reinforcement learning.
//!
//! A Gaussian-process value model is fitted offline by fitted value
//! iteration, then extended by an uncertainty-guided collection loop. The
//! `theory` module checks the accompanying concentration, information-gain
//! and rate statements numerically.

pub mod active;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod env;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod rng;
pub mod theory;
pub mod value;
pub mod valuelearn;

pub use error::{Error, Result};
pub use gp::GpPosterior;
pub use kernel::{KernelFamily, KernelSpec};
pub use value::ValueFunction;
