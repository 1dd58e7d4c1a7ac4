//! Monte Carlo laboratory for one-dimensional excited random walks in random
//! environments with cookies of strength one, their backward branching
//! processes, and the moment criteria that classify their speed.

pub mod branching;
pub mod classifier;
pub mod env_model;
pub mod error;
pub mod harness;
pub mod moments;
pub mod parallel;
pub mod quadrature;
pub mod rng;
pub mod stats;
pub mod suite;
pub mod walk;

pub use error::{Error, Result};
