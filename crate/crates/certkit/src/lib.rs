//! Certificate-function learning toolkit.
//!
//! Learns Lyapunov functions and contraction metrics from sampled
//! trajectories of dynamical systems, attaches statistical generalization
//! bounds (exact binomial test-set bounds and randomized-convex-program
//! bounds) to the learned certificates, and evaluates the global-stability
//! geometry implied by those bounds: violation sets on grids, violation-set
//! ball radii, and comparison-lemma envelopes. Includes an adaptive-control
//! demonstration driven by a learned Lyapunov function.

pub mod adaptive;
pub mod datagen;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod globalcert;
pub mod linalg;
pub mod models;
pub mod special;
pub mod statbounds;
pub mod training;

pub use error::{Error, Result};
